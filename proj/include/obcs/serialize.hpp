#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "obcs/datagen.hpp"
#include "obcs/eval.hpp"
#include "obcs/kvtext.hpp"
#include "obcs/training.hpp"

namespace obcs {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return ss.str();
}

// --- noise model <-> keys ---------------------------------------------------

inline void noise_to_kv(const NoiseModel& noise, const std::string& prefix, KvDoc& doc) {
    switch (noise.kind) {
        case NoiseModel::Kind::None:
            doc.set(prefix + "noise", "none");
            break;
        case NoiseModel::Kind::Iid:
            doc.set(prefix + "noise", "iid");
            doc.set_double(prefix + "noise_sigma2", noise.variance);
            break;
        case NoiseModel::Kind::Full: {
            doc.set(prefix + "noise", "full");
            doc.set_u64(prefix + "noise_cov_rows", noise.covariance.rows());
            doc.set_double_list(prefix + "noise_cov", noise.covariance.data());
            break;
        }
    }
}

inline NoiseModel noise_from_kv(const KvDoc& doc, const std::string& prefix) {
    const std::string kind = doc.get_or(prefix + "noise", "none");
    if (kind == "none") return NoiseModel::none();
    if (kind == "iid") return NoiseModel::iid(parse_double(doc.get(prefix + "noise_sigma2")));
    if (kind == "full") {
        const std::size_t rows = parse_u64(doc.get(prefix + "noise_cov_rows"));
        const std::vector<double> entries = parse_double_list(doc.get(prefix + "noise_cov"));
        if (entries.size() != rows * rows)
            throw ConfigError(prefix + "noise_cov: expected rows*rows entries");
        DenseMatrix c(rows, rows);
        c.data() = entries;
        return NoiseModel::full(std::move(c));
    }
    throw ConfigError(prefix + "noise: unknown kind '" + kind + "'");
}

inline void gen_config_to_kv(const GenConfig& cfg, KvDoc& doc, const std::string& prefix = "gen.") {
    doc.set_u64(prefix + "n", cfg.n);
    doc.set_u64(prefix + "m", cfg.m);
    doc.set_u64(prefix + "k", cfg.sparsity);
    doc.set_u64(prefix + "pairs", cfg.pairs);
    noise_to_kv(cfg.noise, prefix, doc);
    doc.set_bool(prefix + "normalize_signals", cfg.normalize_signals);
    doc.set_double_list(prefix + "tau", cfg.tau.empty() ? DenseVector{0.0} : cfg.tau);
    doc.set_u64(prefix + "seed", cfg.seed);
}

inline GenConfig gen_config_from_kv(const KvDoc& doc, const std::string& prefix = "gen.") {
    GenConfig cfg;
    cfg.n = parse_u64(doc.get(prefix + "n"));
    cfg.m = parse_u64(doc.get(prefix + "m"));
    cfg.sparsity = parse_u64(doc.get(prefix + "k"));
    cfg.pairs = parse_u64(doc.get(prefix + "pairs"));
    cfg.noise = noise_from_kv(doc, prefix);
    cfg.normalize_signals = parse_bool(doc.get_or(prefix + "normalize_signals", "true"));
    cfg.tau = parse_double_list(doc.get_or(prefix + "tau", "0"));
    cfg.seed = parse_u64(doc.get_or(prefix + "seed", "0"));
    return cfg;
}

// --- dataset directory -------------------------------------------------------

inline std::string csv_row(const double* values, std::size_t count, bool as_bits) {
    std::string line;
    for (std::size_t j = 0; j < count; ++j) {
        if (j) line += ',';
        if (as_bits)
            line += values[j] > 0.0 ? "1" : "-1";
        else
            line += fmt_double(values[j]);
    }
    line += '\n';
    return line;
}

// Layout: meta.txt (config + seed), signals.csv (B x n), bits.csv (B x m).
// The true matrix is not stored; it is regenerated from the recorded seed.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory: " + dir.string());

    KvDoc meta;
    meta.set_u64("format_version", 1);
    gen_config_to_kv(ds.config, meta);
    write_file(dir / "meta.txt", meta.dump());

    std::string signals;
    for (const SparseSignal& s : ds.signals)
        signals += csv_row(s.values.data(), s.values.size(), false);
    write_file(dir / "signals.csv", signals);

    std::string bits;
    for (const OneBitMeasurements& y : ds.measurements)
        bits += csv_row(y.bits.data(), y.bits.size(), true);
    write_file(dir / "bits.csv", bits);
}

inline std::vector<DenseVector> parse_csv_rows(const std::string& text, std::size_t expect_cols,
                                               const std::string& what) {
    std::vector<DenseVector> rows;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        DenseVector row = parse_double_list(line);
        if (row.size() != expect_cols)
            throw IoError(what + ": expected " + std::to_string(expect_cols) + " columns, got " +
                          std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    const KvDoc meta = KvDoc::parse(read_file(dir / "meta.txt"));
    Dataset ds;
    ds.config = gen_config_from_kv(meta);
    ds.threshold = ds.config.expanded_tau();
    ds.true_phi.value = regen_true_phi(ds.config);

    const auto signal_rows =
        parse_csv_rows(read_file(dir / "signals.csv"), ds.config.n, "signals.csv");
    const auto bit_rows = parse_csv_rows(read_file(dir / "bits.csv"), ds.config.m, "bits.csv");
    if (signal_rows.size() != bit_rows.size())
        throw IoError("dataset: signals.csv and bits.csv row counts differ");
    ds.signals.reserve(signal_rows.size());
    ds.measurements.reserve(bit_rows.size());
    for (std::size_t i = 0; i < signal_rows.size(); ++i) {
        SparseSignal s;
        s.values = signal_rows[i];
        s.sparsity_bound = ds.config.sparsity;
        ds.signals.push_back(std::move(s));
        OneBitMeasurements y;
        y.bits = bit_rows[i];
        for (double b : y.bits)
            if (b != 1.0 && b != -1.0) throw IoError("bits.csv: entries must be 1 or -1");
        ds.measurements.push_back(std::move(y));
    }
    return ds;
}

// FNV-1a over the canonical bytes of the three dataset files.
inline std::uint64_t dataset_digest(const std::filesystem::path& dir) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const char* name : {"meta.txt", "signals.csv", "bits.csv"}) {
        const std::string content = read_file(dir / name);
        for (unsigned char c : content) {
            h ^= c;
            h *= 0x100000001B3ull;
        }
    }
    return h;
}

inline std::string digest_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// --- model checkpoint --------------------------------------------------------

inline void training_config_to_kv(const TrainingConfig& cfg, KvDoc& doc,
                                  const std::string& prefix) {
    doc.set_u64(prefix + "stage", static_cast<std::uint64_t>(cfg.stage));
    doc.set_u64(prefix + "epochs", cfg.epochs);
    doc.set_u64(prefix + "batch_size", cfg.batch_size);
    doc.set_double(prefix + "lr", cfg.lr);
    doc.set_double(prefix + "shared_alpha", cfg.shared_alpha);
    doc.set_u64(prefix + "depth", cfg.depth);
    doc.set_u64(prefix + "depth_prime", cfg.depth_prime);
    doc.set_double(prefix + "lambda", cfg.lambda);
    doc.set_u64(prefix + "seed", cfg.seed);
    doc.set_bool(prefix + "deterministic_reduction", cfg.deterministic_reduction);
    doc.set_u64(prefix + "sparsity", cfg.sparsity);
    doc.set_bool(prefix + "normalize_per_layer", cfg.normalize_per_layer);
    doc.set_double(prefix + "ste_clip", cfg.ste_clip);
}

inline TrainingConfig training_config_from_kv(const KvDoc& doc, const std::string& prefix) {
    TrainingConfig cfg;
    cfg.stage = static_cast<int>(parse_u64(doc.get(prefix + "stage")));
    cfg.epochs = parse_u64(doc.get(prefix + "epochs"));
    cfg.batch_size = parse_u64(doc.get(prefix + "batch_size"));
    cfg.lr = parse_double(doc.get(prefix + "lr"));
    cfg.shared_alpha = parse_double(doc.get(prefix + "shared_alpha"));
    cfg.depth = parse_u64(doc.get(prefix + "depth"));
    cfg.depth_prime = parse_u64(doc.get(prefix + "depth_prime"));
    cfg.lambda = parse_double(doc.get(prefix + "lambda"));
    cfg.seed = parse_u64(doc.get(prefix + "seed"));
    cfg.deterministic_reduction = parse_bool(doc.get(prefix + "deterministic_reduction"));
    cfg.sparsity = parse_u64(doc.get(prefix + "sparsity"));
    cfg.normalize_per_layer = parse_bool(doc.get(prefix + "normalize_per_layer"));
    cfg.ste_clip = parse_double(doc.get(prefix + "ste_clip"));
    return cfg;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
    KvDoc doc;
    doc.set_u64("format_version", 1);
    doc.set_u64("m", model.params.m());
    doc.set_u64("n", model.params.n());
    doc.set_u64("L", model.depth_stage1);
    doc.set_u64("L_prime", model.depth_inference);
    doc.set_u64("k", model.params.sparsity);
    doc.set_double_list("tau", model.params.threshold);
    doc.set_bool("normalize_per_layer", model.params.normalize_per_layer);
    doc.set_double("ste_clip", model.params.ste_clip);
    doc.set_double_list("phi", model.params.phi.data());
    doc.set_double_list("step_sizes", model.params.step_sizes);
    training_config_to_kv(model.config, doc, "training_config.");
    const KvDoc ds_meta = KvDoc::parse(model.dataset_meta);
    for (const auto& [k, v] : ds_meta.entries()) doc.set("dataset_meta." + k, v);
    doc.set_double_list("loss_history", model.loss_history);
    write_file(path, doc.dump());
}

inline TrainedModel load_checkpoint(const std::filesystem::path& path) {
    const KvDoc doc = KvDoc::parse(read_file(path));
    if (parse_u64(doc.get("format_version")) != 1)
        throw IoError("checkpoint: unsupported format_version");
    TrainedModel model;
    const std::size_t m = parse_u64(doc.get("m"));
    const std::size_t n = parse_u64(doc.get("n"));
    model.depth_stage1 = parse_u64(doc.get("L"));
    model.depth_inference = parse_u64(doc.get("L_prime"));
    model.params.sparsity = parse_u64(doc.get("k"));
    model.params.threshold = parse_double_list(doc.get("tau"));
    model.params.normalize_per_layer = parse_bool(doc.get("normalize_per_layer"));
    model.params.ste_clip = parse_double(doc.get("ste_clip"));
    const std::vector<double> phi = parse_double_list(doc.get("phi"));
    if (phi.size() != m * n) throw IoError("checkpoint: phi entry count != m*n");
    model.params.phi = DenseMatrix(m, n);
    model.params.phi.data() = phi;
    model.params.step_sizes = parse_double_list(doc.get("step_sizes"));
    model.config = training_config_from_kv(doc, "training_config.");
    KvDoc ds_meta;
    for (const auto& [k, v] : doc.entries())
        if (k.rfind("dataset_meta.", 0) == 0) ds_meta.set(k.substr(13), v);
    model.dataset_meta = ds_meta.dump();
    model.loss_history = parse_double_list(doc.get("loss_history"));
    if (model.params.threshold.size() != m) throw IoError("checkpoint: len(tau) != m");
    return model;
}

// --- experiment exports --------------------------------------------------------

inline std::string experiment_mean_csv(const ExperimentResult& r) {
    std::string out = "axis,method,mean_nmse,realizations\n";
    for (std::size_t a = 0; a < r.axis.size(); ++a)
        for (std::size_t m = 0; m < r.methods.size(); ++m) {
            out += fmt_double(r.axis[a]);
            out += ',';
            out += r.methods[m];
            out += ',';
            out += fmt_double(r.mean_nmse[m][a]);
            out += ',';
            out += std::to_string(r.realizations);
            out += '\n';
        }
    return out;
}

inline std::string experiment_raw_csv(const ExperimentResult& r) {
    std::string out = "axis,method,realization,nmse\n";
    for (const auto& row : r.raw) {
        out += fmt_double(row.axis);
        out += ',';
        out += row.method;
        out += ',';
        out += std::to_string(row.realization);
        out += ',';
        out += fmt_double(row.nmse);
        out += '\n';
    }
    return out;
}

}  // namespace obcs
