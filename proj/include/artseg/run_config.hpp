#pragma once

#include <fstream>

#include "artseg/model.hpp"
#include "artseg/optimizer.hpp"

namespace artseg {

// Merged view of config-file keys and command-line overrides. Precedence:
// built-in defaults, then the config file, then explicit flags.
struct RunConfig {
    std::string data;
    std::string out = "artseg_out";
    std::uint64_t seed = 0;
    int epochs = 100;
    double lr = 5e-4;
    int batch = 4;
    int classes = 9;
    double width = 1.0;
    int size = 256;  // resize target fed to the network; must be /32

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch < 1) throw ConfigError("batch must be >= 1");
        if (classes < 2) throw ConfigError("classes must be >= 2");
        if (classes > 255) throw ConfigError("classes must fit 8-bit label maps (<= 255)");
        if (!(width > 0.0)) throw ConfigError("width must be positive");
        if (lr < 0.0) throw ConfigError("lr must be >= 0");
        if (size < 32 || size % 32 != 0)
            throw ConfigError("size must be a positive multiple of 32, got " +
                              std::to_string(size));
    }

    ARTSegConfig model_config() const {
        ARTSegConfig m;
        m.num_classes = classes;
        m.width_multiplier = width;
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.base_lr = lr;
        t.total_epochs = epochs;
        t.batch_size = batch;
        t.seed = seed;
        return t;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

inline long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + value + "' is not an integer");
    }
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + value + "' is not a number");
    }
}

}  // namespace detail

// One key = value assignment; the schema is closed, unknown keys are errors.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "data")
        cfg.data = value;
    else if (key == "out")
        cfg.out = value;
    else if (key == "seed")
        cfg.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
    else if (key == "epochs")
        cfg.epochs = static_cast<int>(detail::parse_int(key, value));
    else if (key == "lr")
        cfg.lr = detail::parse_double(key, value);
    else if (key == "batch")
        cfg.batch = static_cast<int>(detail::parse_int(key, value));
    else if (key == "classes")
        cfg.classes = static_cast<int>(detail::parse_int(key, value));
    else if (key == "width")
        cfg.width = detail::parse_double(key, value);
    else if (key == "size")
        cfg.size = static_cast<int>(detail::parse_int(key, value));
    else
        throw ConfigError("unknown config key '" + key + "'");
}

// Line-oriented `key = value` text; '#' starts a comment, blank lines are
// ignored.
inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = detail::trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + stripped + "'");
        const std::string key = detail::trim(stripped.substr(0, eq));
        const std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key or value");
        apply_config_key(cfg, key, value);
    }
}

// ARTSEG_THREADS caps the worker count; 0 or unset selects single-threaded
// deterministic mode. The compute kernels are single-threaded, which
// satisfies any cap.
inline int read_thread_cap() {
    const char* env = std::getenv("ARTSEG_THREADS");
    if (!env || *env == '\0') return 0;
    const std::string v(env);
    const long long n = detail::parse_int("ARTSEG_THREADS", v);
    if (n < 0) throw ConfigError("ARTSEG_THREADS must be >= 0");
    return static_cast<int>(n);
}

}  // namespace artseg
