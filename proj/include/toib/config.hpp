#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "toib/channel.hpp"
#include "toib/club.hpp"
#include "toib/data.hpp"
#include "toib/errors.hpp"
#include "toib/eval.hpp"
#include "toib/training.hpp"

namespace toib {

// Flat key = value configuration with '#' comments. Unknown keys are
// rejected; missing keys take the documented defaults. Precedence:
// CLI flag > file > (TOIB_SEED, seed only) > default.
struct Config {
    std::string name = "default";
    uint64_t seed = 1;
    std::string data_dir = "data";
    std::string out_root = "run";

    // training
    size_t users = 2;
    size_t epochs = 100;
    size_t batch = 64;
    size_t resamples = 1;
    size_t club_steps = 5;
    double alpha = 0.01;
    double beta = 0.01;
    double lr = 1e-4;
    double club_lr = 1e-3;
    size_t latent_dim = 16;
    std::string channel = "awgn";
    double snr_db = 5.0;
    double pmax = 1.0;
    std::string power = "equal";
    std::string phase_a = "mle";
    std::string label_mode = "shared";
    bool equalize = true;

    // data generation
    size_t classes = 4;
    size_t input_dim = 8;
    size_t samples = 2000;
    double sep = 4.0;
    double noise = 1.0;

    // evaluation
    size_t n_eval = 2000;
    std::vector<double> sweep_snrs{-5, 0, 5, 10, 15, 20};
    double cross_snr_db = 0.0;
    bool latent_mean = false;
};

namespace cfgdetail {

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ContractError(key + " must be true or false, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ContractError(key + " expects a number, got '" + v + "'");
    }
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ContractError(key + " expects a nonnegative integer, got '" + v + "'");
    }
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::string item;
    std::stringstream ss(v);
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(parse_double(key, item));
    }
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace cfgdetail

// The registry of every legal key. apply() routes a raw string into the
// typed field with its constraint check.
inline void config_apply(Config& c, const std::string& key, const std::string& value) {
    using namespace cfgdetail;
    auto u64v = [&] { return parse_u64(key, value); };
    auto dv = [&] { return parse_double(key, value); };

    if (key == "name") {
        if (value.empty()) throw ContractError("name must be nonempty");
        c.name = value;
    } else if (key == "seed") {
        c.seed = u64v();
    } else if (key == "data_dir") {
        c.data_dir = value;
    } else if (key == "out_root") {
        c.out_root = value;
    } else if (key == "users") {
        c.users = u64v();
        if (c.users < 1) throw ContractError("users must be >= 1");
    } else if (key == "epochs") {
        c.epochs = u64v();
    } else if (key == "batch") {
        c.batch = u64v();
        if (c.batch < 2) throw ContractError("batch must be >= 2");
    } else if (key == "resamples") {
        c.resamples = u64v();
        if (c.resamples < 1) throw ContractError("resamples must be >= 1");
    } else if (key == "club_steps") {
        c.club_steps = u64v();
    } else if (key == "alpha") {
        c.alpha = dv();
        if (c.alpha < 0.0) throw ContractError("alpha must satisfy alpha >= 0");
    } else if (key == "beta") {
        c.beta = dv();
        if (c.beta < 0.0) throw ContractError("beta must satisfy beta >= 0");
    } else if (key == "lr") {
        c.lr = dv();
        if (!(c.lr > 0.0)) throw ContractError("lr must be > 0");
    } else if (key == "club_lr") {
        c.club_lr = dv();
        if (!(c.club_lr > 0.0)) throw ContractError("club_lr must be > 0");
    } else if (key == "latent_dim") {
        c.latent_dim = u64v();
        if (c.latent_dim < 1) throw ContractError("latent_dim must be >= 1");
    } else if (key == "channel") {
        if (value != "awgn" && value != "rayleigh") throw ContractError("channel must be awgn or rayleigh");
        c.channel = value;
    } else if (key == "snr_db") {
        c.snr_db = dv();
    } else if (key == "pmax") {
        c.pmax = dv();
        if (!(c.pmax > 0.0)) throw ContractError("pmax must be > 0");
    } else if (key == "power") {
        if (value != "equal") throw ContractError("power must be equal");
        c.power = value;
    } else if (key == "phase_a") {
        if (value != "mle" && value != "vclub_ascent")
            throw ContractError("phase_a must be mle or vclub_ascent");
        c.phase_a = value;
    } else if (key == "label_mode") {
        if (value != "shared" && value != "independent")
            throw ContractError("label_mode must be shared or independent");
        c.label_mode = value;
    } else if (key == "equalize") {
        c.equalize = parse_bool(key, value);
    } else if (key == "classes") {
        c.classes = u64v();
        if (c.classes < 2) throw ContractError("classes must be >= 2");
    } else if (key == "input_dim") {
        c.input_dim = u64v();
        if (c.input_dim < 1) throw ContractError("input_dim must be >= 1");
    } else if (key == "samples") {
        c.samples = u64v();
    } else if (key == "sep") {
        c.sep = dv();
        if (!(c.sep > 0.0)) throw ContractError("sep must be > 0");
    } else if (key == "noise") {
        c.noise = dv();
        if (!(c.noise > 0.0)) throw ContractError("noise must be > 0");
    } else if (key == "n_eval") {
        c.n_eval = u64v();
        if (c.n_eval < 1) throw ContractError("n_eval must be >= 1");
    } else if (key == "sweep_snrs") {
        c.sweep_snrs = parse_list(key, value);
    } else if (key == "cross_snr_db") {
        c.cross_snr_db = dv();
    } else if (key == "latent_mean") {
        c.latent_mean = parse_bool(key, value);
    } else {
        throw ContractError("unknown config key '" + key + "'");
    }
}

// Cross-field checks that single-key constraints cannot express.
inline void config_validate(const Config& c) {
    if (c.samples < 2 * c.classes)
        throw ContractError("samples (" + std::to_string(c.samples) + ") must be >= 2 * classes (" +
                            std::to_string(2 * c.classes) + ")");
}

inline void config_apply_file(Config& c, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ContractError("config file not found: " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = cfgdetail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = cfgdetail::trim(line.substr(0, eq));
        const std::string value = cfgdetail::trim(line.substr(eq + 1));
        config_apply(c, key, value);
    }
}

// Defaults, then TOIB_SEED, then the file, then CLI overrides in order.
inline Config resolve_config(const std::string& file_path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
    Config c;
    if (const char* env = std::getenv("TOIB_SEED")) config_apply(c, "seed", env);
    if (!file_path.empty()) config_apply_file(c, file_path);
    for (const auto& [k, v] : overrides) config_apply(c, k, v);
    config_validate(c);
    return c;
}

inline std::string config_echo(const Config& c) {
    std::ostringstream o;
    auto list_str = [&] {
        std::string s;
        for (size_t i = 0; i < c.sweep_snrs.size(); ++i) {
            if (i) s += ",";
            s += fmt_g17(c.sweep_snrs[i]);
        }
        return s;
    };
    o << "name = " << c.name << "\n";
    o << "seed = " << c.seed << "\n";
    o << "data_dir = " << c.data_dir << "\n";
    o << "out_root = " << c.out_root << "\n";
    o << "users = " << c.users << "\n";
    o << "epochs = " << c.epochs << "\n";
    o << "batch = " << c.batch << "\n";
    o << "resamples = " << c.resamples << "\n";
    o << "club_steps = " << c.club_steps << "\n";
    o << "alpha = " << fmt_g17(c.alpha) << "\n";
    o << "beta = " << fmt_g17(c.beta) << "\n";
    o << "lr = " << fmt_g17(c.lr) << "\n";
    o << "club_lr = " << fmt_g17(c.club_lr) << "\n";
    o << "latent_dim = " << c.latent_dim << "\n";
    o << "channel = " << c.channel << "\n";
    o << "snr_db = " << fmt_g17(c.snr_db) << "\n";
    o << "pmax = " << fmt_g17(c.pmax) << "\n";
    o << "power = " << c.power << "\n";
    o << "phase_a = " << c.phase_a << "\n";
    o << "label_mode = " << c.label_mode << "\n";
    o << "equalize = " << (c.equalize ? "true" : "false") << "\n";
    o << "classes = " << c.classes << "\n";
    o << "input_dim = " << c.input_dim << "\n";
    o << "samples = " << c.samples << "\n";
    o << "sep = " << fmt_g17(c.sep) << "\n";
    o << "noise = " << fmt_g17(c.noise) << "\n";
    o << "n_eval = " << c.n_eval << "\n";
    o << "sweep_snrs = " << list_str() << "\n";
    o << "cross_snr_db = " << fmt_g17(c.cross_snr_db) << "\n";
    o << "latent_mean = " << (c.latent_mean ? "true" : "false") << "\n";
    return o.str();
}

inline void write_config_echo(const Config& c, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f << config_echo(c);
}

// ---- typed views ----

inline TrainConfig to_train_config(const Config& c) {
    TrainConfig t;
    t.n_users = c.users;
    t.epochs = c.epochs;
    t.batch = c.batch;
    t.resamples = c.resamples;
    t.club_steps = c.club_steps;
    t.alpha = c.alpha;
    t.beta = c.beta;
    t.lr = c.lr;
    t.club_lr = c.club_lr;
    t.latent_dim = c.latent_dim;
    t.channel = c.channel == "awgn" ? ChannelKind::awgn : ChannelKind::rayleigh;
    t.snr_db = c.snr_db;
    t.pmax = c.pmax;
    t.power = PowerMode::equal;
    t.phase_a = c.phase_a == "mle" ? PhaseAMode::mle : PhaseAMode::vclub_ascent;
    t.label_mode = c.label_mode == "shared" ? LabelMode::shared : LabelMode::independent;
    t.equalize = c.equalize;
    t.seed = c.seed;
    t.validate();
    return t;
}

inline GenSpec to_gen_spec(const Config& c) {
    GenSpec g;
    g.k = c.classes;
    g.d_x = c.input_dim;
    g.n_per_user = c.samples;
    g.n_users = c.users;
    g.c_sep = c.sep;
    g.sigma_x = c.noise;
    g.label_mode = c.label_mode == "shared" ? LabelMode::shared : LabelMode::independent;
    g.seed = c.seed;
    g.validate();
    return g;
}

inline EvalOptions to_eval_options(const Config& c) {
    EvalOptions o;
    o.n_eval = c.n_eval;
    o.channel = c.channel == "awgn" ? ChannelKind::awgn : ChannelKind::rayleigh;
    o.equalize = c.equalize;
    o.latent_mean = c.latent_mean;
    o.label_mode = c.label_mode == "shared" ? LabelMode::shared : LabelMode::independent;
    return o;
}

}  // namespace toib
