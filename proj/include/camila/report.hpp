#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "camila/error.hpp"
#include "camila/image.hpp"

// Training configuration files and run reports, both `key = value` text.

namespace camila {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s, const std::string& key) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw FormatError("trailing characters in value of '" + key + "'");
        }
        return v;
    } catch (const std::invalid_argument&) {
        throw FormatError("value of '" + key + "' is not a number: '" + s + "'");
    } catch (const std::out_of_range&) {
        throw FormatError("value of '" + key + "' is out of range");
    }
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& key) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw FormatError("value of '" + key + "' is not a non-negative integer: '" + s + "'");
    }
    try {
        return std::stoull(s);
    } catch (const std::out_of_range&) {
        throw FormatError("value of '" + key + "' is out of range");
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw FormatError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw FormatError("line " + std::to_string(lineno) + ": empty key");
        }
        out.emplace_back(key, trim(t.substr(eq + 1)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training configuration

struct TrainConfig {
    double lambda_token = 1.0;
    double lambda_broadcast = 1.0;
    double lambda_dice = 1.0;
    double lambda_bce = 1.0;
    double lambda_mse = 10.0;
    double lr_main = 3e-4;
    double lr_surrogate = 3e-4;
    double lr_refine = 1e-4;
    double weight_decay = 0.0;
    std::uint64_t steps_main = 4000;
    std::uint64_t steps_surrogate = 500;
    std::uint64_t steps_refine = 500;
    std::uint64_t batch_size = 16;
    std::uint64_t seed = 0;
    std::uint64_t lora_rank = 4;
    double lora_scale = 16.0;
    double augment = 0.5;
    double cond_dropout = 0.05;
    double s_image = 1.5;
    double s_text = 7.5;
    double oracle_score = 1.0;
    std::uint64_t log_every = 50;

    /// Every key the configuration was built from, in file order.
    std::vector<std::pair<std::string, std::string>> echo;

    void validate() const {
        for (double l : {lambda_token, lambda_broadcast, lambda_dice, lambda_bce, lambda_mse}) {
            if (!(l >= 0.0)) {
                throw ContractError("loss weights must be non-negative");
            }
        }
        for (double r : {lr_main, lr_surrogate, lr_refine}) {
            if (!(r > 0.0)) {
                throw ContractError("learning rates must be positive");
            }
        }
        if (batch_size == 0 || log_every == 0) {
            throw ContractError("batch_size and log_every must be positive");
        }
        if (!(augment >= 0.0 && augment <= 1.0)) {
            throw ContractError("augment must lie in [0, 1]");
        }
        if (cond_dropout < 0.0 || cond_dropout > 0.5) {
            throw ContractError("cond_dropout must lie in [0, 0.5]");
        }
    }
};

inline TrainConfig parse_train_config(const std::string& text) {
    TrainConfig c;
    std::map<std::string, double*> doubles = {
        {"lambda_token", &c.lambda_token},   {"lambda_broadcast", &c.lambda_broadcast},
        {"lambda_dice", &c.lambda_dice},     {"lambda_bce", &c.lambda_bce},
        {"lambda_mse", &c.lambda_mse},       {"lr_main", &c.lr_main},
        {"lr_surrogate", &c.lr_surrogate},   {"lr_refine", &c.lr_refine},
        {"weight_decay", &c.weight_decay},   {"lora_scale", &c.lora_scale},
        {"augment", &c.augment},             {"cond_dropout", &c.cond_dropout},
        {"s_image", &c.s_image},             {"s_text", &c.s_text},
        {"oracle_score", &c.oracle_score},
    };
    std::map<std::string, std::uint64_t*> ints = {
        {"steps_main", &c.steps_main}, {"steps_surrogate", &c.steps_surrogate},
        {"steps_refine", &c.steps_refine}, {"batch_size", &c.batch_size},
        {"seed", &c.seed}, {"lora_rank", &c.lora_rank}, {"log_every", &c.log_every},
    };
    for (const auto& [k, v] : parse_key_values(text)) {
        if (auto it = doubles.find(k); it != doubles.end()) {
            *it->second = parse_double(v, k);
        } else if (auto jt = ints.find(k); jt != ints.end()) {
            *jt->second = parse_uint(v, k);
        } else {
            throw FormatError("unknown configuration key '" + k + "'");
        }
        c.echo.emplace_back(k, v);
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Run report

struct RunReport {
    std::string phase;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> config;
    std::map<std::string, double> metrics;
    std::map<std::string, std::vector<double>> traces;

    bool operator==(const RunReport&) const = default;
};

inline std::string write_report(const RunReport& r) {
    std::ostringstream os;
    os << "camila-report 1\n";
    os << "phase = " << r.phase << "\n";
    os << "seed = " << r.seed << "\n";
    for (const auto& [k, v] : r.config) {
        os << "config." << k << " = " << v << "\n";
    }
    for (const auto& [k, v] : r.metrics) {
        os << "metric." << k << " = " << format_double(v) << "\n";
    }
    for (const auto& [k, vs] : r.traces) {
        os << "trace." << k << " =";
        for (double v : vs) {
            os << " " << format_double(v);
        }
        os << "\n";
    }
    return os.str();
}

inline RunReport parse_report(const std::string& text) {
    const auto nl = text.find('\n');
    if (nl == std::string::npos || text.substr(0, nl) != "camila-report 1") {
        throw FormatError("not a camila report (bad header)");
    }
    RunReport r;
    for (const auto& [k, v] : parse_key_values(text.substr(nl + 1))) {
        if (k == "phase") {
            r.phase = v;
        } else if (k == "seed") {
            r.seed = parse_uint(v, k);
        } else if (k.rfind("config.", 0) == 0) {
            r.config.emplace_back(k.substr(7), v);
        } else if (k.rfind("metric.", 0) == 0) {
            r.metrics[k.substr(7)] = parse_double(v, k);
        } else if (k.rfind("trace.", 0) == 0) {
            std::vector<double> vs;
            std::istringstream is(v);
            std::string w;
            while (is >> w) {
                vs.push_back(parse_double(w, k));
            }
            r.traces[k.substr(6)] = std::move(vs);
        } else {
            throw FormatError("unknown report key '" + k + "'");
        }
    }
    return r;
}

}  // namespace camila
