#pragma once

#include <functional>
#include <sstream>

#include "training.hpp"

namespace pansharp {

// Everything the CLI can configure. Training, model, and loss knobs live in
// the nested TrainConfig; the rest is harness plumbing.
struct Settings {
    TrainConfig train;
    std::vector<uint64_t> ablation_seeds = {0, 1, 2};
};

namespace detail {

inline int64_t parse_i64(const std::string& key, const std::string& v) {
    size_t used = 0;
    int64_t out;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw config_error("key '" + key + "': '" + v + "' is not an integer");
    return out;
}

inline double parse_f64(const std::string& key, const std::string& v) {
    size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw config_error("key '" + key + "': '" + v + "' is not a number");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw config_error("key '" + key + "': '" + v + "' is not a boolean (use 0/1)");
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

struct ConfigKey {
    std::string name;
    std::string description;
    std::function<std::string(const Settings&)> get;
    std::function<void(Settings&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_schema() {
    using detail::parse_bool;
    using detail::parse_f64;
    using detail::parse_i64;
    auto i64 = [](std::string name, std::string desc, int64_t TrainConfig::* field) {
        return ConfigKey{name, desc,
                         [field](const Settings& s) { return std::to_string(s.train.*field); },
                         [name, field](Settings& s, const std::string& v) {
                             s.train.*field = parse_i64(name, v);
                         }};
    };
    auto f64 = [](std::string name, std::string desc, double TrainConfig::* field) {
        return ConfigKey{name, desc,
                         [field](const Settings& s) {
                             std::ostringstream os;
                             os << s.train.*field;
                             return os.str();
                         },
                         [name, field](Settings& s, const std::string& v) {
                             s.train.*field = parse_f64(name, v);
                         }};
    };
    static const std::vector<ConfigKey> schema = {
        {"seed", "master seed; all sub-streams derive from it",
         [](const Settings& s) { return std::to_string(s.train.seed); },
         [](Settings& s, const std::string& v) {
             s.train.seed = uint64_t(parse_i64("seed", v));
         }},
        {"profile",
         "named scale: 'desk' (default) or 'paper' (300K iterations, batch 32); "
         "applied immediately, later keys still override",
         [](const Settings&) { return std::string("desk"); },
         [](Settings& s, const std::string& v) {
             if (v == "desk") {
                 s.train.iterations = 2000;
                 s.train.batch = 8;
             } else if (v == "paper") {
                 s.train.iterations = 300000;
                 s.train.batch = 32;
             } else {
                 throw config_error("key 'profile': unknown profile '" + v + "'");
             }
         }},
        i64("iterations", "training iterations", &TrainConfig::iterations),
        i64("batch", "batch size", &TrainConfig::batch),
        f64("lr", "initial learning rate", &TrainConfig::lr),
        f64("lr_decay", "learning-rate decay factor", &TrainConfig::lr_decay),
        i64("lr_decay_every", "iterations between decays", &TrainConfig::lr_decay_every),
        f64("beta1", "first-moment coefficient", &TrainConfig::beta1),
        f64("beta2", "second-moment coefficient", &TrainConfig::beta2),
        f64("weight_decay", "decoupled weight decay", &TrainConfig::weight_decay),
        i64("train_scenes", "synthetic training scenes", &TrainConfig::train_scenes),
        i64("val_scenes", "synthetic validation scenes", &TrainConfig::val_scenes),
        i64("height", "scene height (divisible by 4)", &TrainConfig::height),
        i64("width", "scene width (divisible by 4)", &TrainConfig::width),
        i64("val_every", "iterations between validation passes", &TrainConfig::val_every),
        i64("timesteps", "diffusion timesteps T", &TrainConfig::timesteps),
        i64("ddim_count", "DDIM sampling steps", &TrainConfig::ddim_count),
        {"lambda_s", "soft-loss weight",
         [](const Settings& s) {
             std::ostringstream os;
             os << s.train.loss.lambda_s;
             return os.str();
         },
         [](Settings& s, const std::string& v) {
             s.train.loss.lambda_s = parse_f64("lambda_s", v);
         }},
        {"lambda_f", "feature-loss weight",
         [](const Settings& s) {
             std::ostringstream os;
             os << s.train.loss.lambda_f;
             return os.str();
         },
         [](Settings& s, const std::string& v) {
             s.train.loss.lambda_f = parse_f64("lambda_f", v);
         }},
        {"tau", "uncertainty pivot of the hard/soft weights",
         [](const Settings& s) {
             std::ostringstream os;
             os << s.train.loss.tau;
             return os.str();
         },
         [](Settings& s, const std::string& v) { s.train.loss.tau = parse_f64("tau", v); }},
        {"gamma", "feature-loss smoothing constant",
         [](const Settings& s) {
             std::ostringstream os;
             os << s.train.loss.gamma;
             return os.str();
         },
         [](Settings& s, const std::string& v) { s.train.loss.gamma = parse_f64("gamma", v); }},
        {"bands", "multispectral band count",
         [](const Settings& s) { return std::to_string(s.train.model.bands); },
         [](Settings& s, const std::string& v) { s.train.model.bands = parse_i64("bands", v); }},
        {"base_channels", "channels of the first stage",
         [](const Settings& s) { return std::to_string(s.train.model.base_channels); },
         [](Settings& s, const std::string& v) {
             s.train.model.base_channels = parse_i64("base_channels", v);
         }},
        {"stages", "encoder/decoder stage count",
         [](const Settings& s) { return std::to_string(s.train.model.stages); },
         [](Settings& s, const std::string& v) { s.train.model.stages = parse_i64("stages", v); }},
        {"multipliers", "per-stage channel multipliers, comma-separated",
         [](const Settings& s) {
             std::string out;
             for (size_t i = 0; i < s.train.model.multipliers.size(); ++i)
                 out += (i ? "," : "") + std::to_string(s.train.model.multipliers[i]);
             return out;
         },
         [](Settings& s, const std::string& v) {
             std::vector<int64_t> m;
             std::istringstream in(v);
             for (std::string tok; std::getline(in, tok, ',');)
                 m.push_back(parse_i64("multipliers", detail::trim(tok)));
             if (m.empty()) throw config_error("key 'multipliers': empty list");
             s.train.model.multipliers = m;
         }},
        {"vec_dim", "FFA conditioning vector length",
         [](const Settings& s) { return std::to_string(s.train.model.vec_dim); },
         [](Settings& s, const std::string& v) {
             s.train.model.vec_dim = parse_i64("vec_dim", v);
         }},
        {"gn_groups", "group-norm groups (0 = automatic)",
         [](const Settings& s) { return std::to_string(s.train.model.gn_groups); },
         [](Settings& s, const std::string& v) {
             s.train.model.gn_groups = int(parse_i64("gn_groups", v));
         }},
        {"conditioning", "wavelet conditioning: swt or dwt",
         [](const Settings& s) {
             return std::string(s.train.model.conditioning == WaveletKind::SWT ? "swt" : "dwt");
         },
         [](Settings& s, const std::string& v) {
             if (v == "swt")
                 s.train.model.conditioning = WaveletKind::SWT;
             else if (v == "dwt")
                 s.train.model.conditioning = WaveletKind::DWT;
             else
                 throw config_error("key 'conditioning': expected swt or dwt, got '" + v + "'");
         }},
        {"ffa", "enable encoder FFA blocks (0/1)",
         [](const Settings& s) { return std::string(s.train.model.ffa_on ? "1" : "0"); },
         [](Settings& s, const std::string& v) { s.train.model.ffa_on = parse_bool("ffa", v); }},
        {"hqfe", "enable decoder FTCA+SWTCA blocks (0/1)",
         [](const Settings& s) { return std::string(s.train.model.hqfe_on ? "1" : "0"); },
         [](Settings& s, const std::string& v) { s.train.model.hqfe_on = parse_bool("hqfe", v); }},
        {"mode", "distillation selector: l1, kd, or uknow",
         [](const Settings& s) {
             switch (s.train.mode) {
                 case AblationMode::StudentL1: return std::string("l1");
                 case AblationMode::StudentKD: return std::string("kd");
                 case AblationMode::StudentUKnow: return std::string("uknow");
                 default: return std::string("teacher");
             }
         },
         [](Settings& s, const std::string& v) {
             if (v == "l1")
                 s.train.mode = AblationMode::StudentL1;
             else if (v == "kd")
                 s.train.mode = AblationMode::StudentKD;
             else if (v == "uknow")
                 s.train.mode = AblationMode::StudentUKnow;
             else if (v == "teacher")
                 s.train.mode = AblationMode::Teacher;
             else
                 throw config_error("key 'mode': expected l1, kd, uknow, or teacher, got '" + v +
                                    "'");
         }},
        {"ablation_seeds", "seeds for the ablation matrix, comma-separated",
         [](const Settings& s) {
             std::string out;
             for (size_t i = 0; i < s.ablation_seeds.size(); ++i)
                 out += (i ? "," : "") + std::to_string(s.ablation_seeds[i]);
             return out;
         },
         [](Settings& s, const std::string& v) {
             std::vector<uint64_t> seeds;
             std::istringstream in(v);
             for (std::string tok; std::getline(in, tok, ',');)
                 seeds.push_back(uint64_t(parse_i64("ablation_seeds", detail::trim(tok))));
             if (seeds.empty()) throw config_error("key 'ablation_seeds': empty list");
             s.ablation_seeds = seeds;
         }},
    };
    return schema;
}

inline void apply_kv(Settings& s, const std::string& key, const std::string& value) {
    for (const auto& k : config_schema())
        if (k.name == key) {
            k.set(s, value);
            return;
        }
    throw config_error("unknown config key '" + key + "'");
}

// UTF-8 `key = value` lines; '#' starts a comment; blank lines allowed.
inline void load_config_file(Settings& s, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path + "'");
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) +
                               ": expected 'key = value', got '" + line + "'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        try {
            apply_kv(s, key, value);
        } catch (const config_error& e) {
            throw config_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

// Full round-trippable dump; the sidecar written next to every checkpoint.
inline std::string dump_config(const Settings& s) {
    std::string out;
    for (const auto& k : config_schema()) {
        if (k.name == "profile") continue;  // a macro, not a state variable
        out += k.name + " = " + k.get(s) + "\n";
    }
    return out;
}

}  // namespace pansharp
