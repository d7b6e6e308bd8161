#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "obcs/eval.hpp"
#include "obcs/serialize.hpp"

namespace obcs {

// Parsed run configuration: flat dotted keys, e.g. "gen.n = 128". Unknown
// keys and malformed values are all reported together, not one at a time.
struct RunConfig {
    GenConfig gen;
    TrainingConfig stage1;
    TrainingConfig stage2;
    BaselineConfig biht;
    std::size_t exp_realizations = 20;
    std::size_t exp_train_pairs = 1000;
    std::size_t exp_test_pairs = 200;
    std::vector<std::size_t> exp_k_values = {2, 4, 8, 12, 16};
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::size_t threads = 0;  // 0 = all cores
    bool deterministic = false;
    std::string snapshot;  // the normalized key/value dump
};

namespace detail {

inline const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys = {
        "seed", "out", "threads", "deterministic",
        "gen.n", "gen.m", "gen.k", "gen.pairs", "gen.noise", "gen.noise_sigma2",
        "gen.noise_cov_file", "gen.normalize_signals", "gen.tau",
        "net.depth", "net.depth_prime", "net.k", "net.ste_clip", "net.normalize",
        "stage1.epochs", "stage1.batch_size", "stage1.lr", "stage1.alpha",
        "stage2.epochs", "stage2.batch_size", "stage2.lr", "stage2.lambda", "stage2.alpha_init",
        "biht.alpha", "biht.normalize",
        "exp.realizations", "exp.train_pairs", "exp.test_pairs", "exp.k_values",
    };
    return keys;
}

struct ConfigErrors {
    std::vector<std::string> messages;

    template <class Fn>
    void attempt(const std::string& key, Fn&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            messages.push_back(key + ": " + e.what());
        }
    }

    void finish() const {
        if (messages.empty()) return;
        std::string joined = "invalid configuration:";
        for (const auto& m : messages) joined += "\n  " + m;
        throw ConfigError(joined);
    }
};

}  // namespace detail

inline RunConfig parse_run_config(const KvDoc& doc, const std::filesystem::path& base_dir) {
    detail::ConfigErrors errors;
    for (const auto& [key, value] : doc.entries())
        if (!detail::known_config_keys().count(key))
            errors.messages.push_back("unknown key '" + key + "'");

    RunConfig rc;
    rc.stage1.stage = 1;
    rc.stage2.stage = 2;
    rc.stage2.epochs = 100;

    auto get = [&doc](const char* key, const char* fallback) { return doc.get_or(key, fallback); };

    errors.attempt("seed", [&] { rc.seed = parse_u64(get("seed", "0")); });
    rc.out_dir = get("out", ".");
    errors.attempt("threads", [&] { rc.threads = parse_u64(get("threads", "0")); });
    errors.attempt("deterministic",
                   [&] { rc.deterministic = parse_bool(get("deterministic", "false")); });

    errors.attempt("gen.n", [&] { rc.gen.n = parse_u64(get("gen.n", "128")); });
    errors.attempt("gen.m", [&] { rc.gen.m = parse_u64(get("gen.m", "512")); });
    errors.attempt("gen.k", [&] { rc.gen.sparsity = parse_u64(get("gen.k", "5")); });
    errors.attempt("gen.pairs", [&] { rc.gen.pairs = parse_u64(get("gen.pairs", "1000")); });
    errors.attempt("gen.noise", [&] {
        const std::string kind = get("gen.noise", "none");
        if (kind == "none") {
            rc.gen.noise = NoiseModel::none();
        } else if (kind == "iid") {
            rc.gen.noise = NoiseModel::iid(parse_double(get("gen.noise_sigma2", "1")));
        } else if (kind == "full") {
            const std::string file = doc.get("gen.noise_cov_file");
            const std::filesystem::path path = base_dir / file;
            const auto rows = parse_csv_rows(read_file(path), rc.gen.m, "noise covariance");
            if (rows.size() != rc.gen.m) throw ConfigError("covariance must be m x m");
            DenseMatrix c(rc.gen.m, rc.gen.m);
            for (std::size_t i = 0; i < rc.gen.m; ++i)
                for (std::size_t j = 0; j < rc.gen.m; ++j) c(i, j) = rows[i][j];
            rc.gen.noise = NoiseModel::full(std::move(c));
        } else {
            throw ConfigError("expected none|iid|full, got '" + kind + "'");
        }
    });
    errors.attempt("gen.normalize_signals", [&] {
        rc.gen.normalize_signals = parse_bool(get("gen.normalize_signals", "true"));
    });
    errors.attempt("gen.tau", [&] { rc.gen.tau = parse_double_list(get("gen.tau", "0")); });
    rc.gen.seed = rc.seed;

    std::size_t depth = 10, depth_prime = 0, net_k = 0;
    double ste_clip = 1.0;
    bool normalize = true;
    errors.attempt("net.depth", [&] { depth = parse_u64(get("net.depth", "10")); });
    errors.attempt("net.depth_prime",
                   [&] { depth_prime = parse_u64(get("net.depth_prime", "0")); });
    errors.attempt("net.k", [&] { net_k = parse_u64(get("net.k", "0")); });
    errors.attempt("net.ste_clip", [&] { ste_clip = parse_double(get("net.ste_clip", "1")); });
    errors.attempt("net.normalize", [&] { normalize = parse_bool(get("net.normalize", "true")); });
    if (depth_prime == 0) depth_prime = depth;

    auto fill_common = [&](TrainingConfig& cfg) {
        cfg.depth = depth;
        cfg.depth_prime = depth_prime;
        cfg.sparsity = net_k;  // 0 falls back to the data sparsity bound
        cfg.ste_clip = ste_clip;
        cfg.normalize_per_layer = normalize;
        cfg.seed = rc.seed;
    };
    fill_common(rc.stage1);
    fill_common(rc.stage2);

    errors.attempt("stage1.epochs",
                   [&] { rc.stage1.epochs = parse_u64(get("stage1.epochs", "200")); });
    errors.attempt("stage1.batch_size",
                   [&] { rc.stage1.batch_size = parse_u64(get("stage1.batch_size", "32")); });
    errors.attempt("stage1.lr", [&] { rc.stage1.lr = parse_double(get("stage1.lr", "0.0001")); });
    errors.attempt("stage1.alpha",
                   [&] { rc.stage1.shared_alpha = parse_double(get("stage1.alpha", "0")); });

    errors.attempt("stage2.epochs",
                   [&] { rc.stage2.epochs = parse_u64(get("stage2.epochs", "100")); });
    errors.attempt("stage2.batch_size",
                   [&] { rc.stage2.batch_size = parse_u64(get("stage2.batch_size", "32")); });
    errors.attempt("stage2.lr", [&] { rc.stage2.lr = parse_double(get("stage2.lr", "0.0001")); });
    errors.attempt("stage2.lambda",
                   [&] { rc.stage2.lambda = parse_double(get("stage2.lambda", "1")); });
    errors.attempt("stage2.alpha_init", [&] {
        rc.stage2.shared_alpha = parse_double(get("stage2.alpha_init", "0"));
    });

    errors.attempt("biht.alpha", [&] { rc.biht.alpha = parse_double(get("biht.alpha", "0")); });
    errors.attempt("biht.normalize",
                   [&] { rc.biht.normalize = parse_bool(get("biht.normalize", "true")); });

    errors.attempt("exp.realizations",
                   [&] { rc.exp_realizations = parse_u64(get("exp.realizations", "20")); });
    errors.attempt("exp.train_pairs",
                   [&] { rc.exp_train_pairs = parse_u64(get("exp.train_pairs", "1000")); });
    errors.attempt("exp.test_pairs",
                   [&] { rc.exp_test_pairs = parse_u64(get("exp.test_pairs", "200")); });
    errors.attempt("exp.k_values", [&] {
        const auto vals = parse_double_list(get("exp.k_values", "2,4,8,12,16"));
        rc.exp_k_values.clear();
        for (double v : vals) {
            if (v < 1.0 || v != static_cast<double>(static_cast<std::size_t>(v)))
                throw ConfigError("sparsity levels must be positive integers");
            rc.exp_k_values.push_back(static_cast<std::size_t>(v));
        }
    });

    // Cross-field checks.
    if (rc.gen.sparsity < 1 || rc.gen.sparsity > rc.gen.n)
        errors.messages.push_back("gen.k: need 1 <= K <= gen.n");
    if (rc.gen.m < 1) errors.messages.push_back("gen.m: need m >= 1");
    if (depth_prime > depth)
        errors.messages.push_back("net.depth_prime: must not exceed net.depth");
    if (!rc.gen.tau.empty() && rc.gen.tau.size() != 1 && rc.gen.tau.size() != rc.gen.m)
        errors.messages.push_back("gen.tau: give one value or exactly m values");
    errors.finish();

    rc.snapshot = doc.dump();
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    const KvDoc doc = KvDoc::parse(read_file(path));
    return parse_run_config(doc, path.has_parent_path() ? path.parent_path()
                                                        : std::filesystem::path("."));
}

inline ExperimentConfig experiment_config(const RunConfig& rc) {
    ExperimentConfig ec;
    ec.gen = rc.gen;
    ec.train_pairs = rc.exp_train_pairs;
    ec.test_pairs = rc.exp_test_pairs;
    ec.stage1 = rc.stage1;
    ec.stage2 = rc.stage2;
    ec.biht = rc.biht;
    ec.seed = rc.seed;
    ec.threads = rc.threads;
    return ec;
}

}  // namespace obcs
