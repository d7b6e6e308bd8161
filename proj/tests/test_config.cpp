#include "obcs/run_config.hpp"

#include <gtest/gtest.h>

using namespace obcs;

namespace {

RunConfig parse_text(const std::string& text) {
    return parse_run_config(KvDoc::parse(text), std::filesystem::path("."));
}

}  // namespace

TEST(RunConfig, DefaultsMatchTheReferenceScale) {
    const RunConfig rc = parse_text("");
    EXPECT_EQ(rc.gen.n, 128u);
    EXPECT_EQ(rc.gen.m, 512u);
    EXPECT_EQ(rc.gen.sparsity, 5u);
    EXPECT_EQ(rc.stage1.depth, 10u);
    EXPECT_EQ(rc.stage1.depth_prime, 10u);
    EXPECT_EQ(rc.stage1.lr, 1e-4);
    EXPECT_EQ(rc.stage1.epochs, 200u);
    EXPECT_EQ(rc.stage2.epochs, 100u);
    EXPECT_EQ(rc.stage1.batch_size, 32u);
    EXPECT_EQ(rc.stage2.lambda, 1.0);
    EXPECT_EQ(rc.stage1.shared_alpha, 0.0);  // auto: resolves to 1/m
    EXPECT_EQ(rc.biht.alpha, 0.0);           // auto: resolves to 1/m
    EXPECT_TRUE(rc.biht.normalize);
    EXPECT_EQ(rc.exp_realizations, 20u);
    EXPECT_EQ(rc.exp_k_values, (std::vector<std::size_t>{2, 4, 8, 12, 16}));
}

TEST(RunConfig, ParsesDottedKeys) {
    const RunConfig rc = parse_text(
        "gen.n = 32\n"
        "gen.m = 128\n"
        "gen.k = 3\n"
        "gen.noise = iid\n"
        "gen.noise_sigma2 = 1\n"
        "net.depth = 10\n"
        "stage1.epochs = 40\n"
        "stage1.lr = 0.01\n"
        "stage2.lambda = 2.5\n"
        "exp.realizations = 5\n"
        "exp.k_values = 2,4,8\n"
        "seed = 17\n"
        "threads = 2\n");
    EXPECT_EQ(rc.gen.n, 32u);
    EXPECT_EQ(rc.gen.noise.kind, NoiseModel::Kind::Iid);
    EXPECT_EQ(rc.gen.noise.variance, 1.0);
    EXPECT_EQ(rc.stage1.epochs, 40u);
    EXPECT_EQ(rc.stage1.lr, 0.01);
    EXPECT_EQ(rc.stage2.lambda, 2.5);
    EXPECT_EQ(rc.exp_realizations, 5u);
    EXPECT_EQ(rc.exp_k_values, (std::vector<std::size_t>{2, 4, 8}));
    EXPECT_EQ(rc.seed, 17u);
    EXPECT_EQ(rc.gen.seed, 17u);
    EXPECT_EQ(rc.stage1.seed, 17u);
    EXPECT_EQ(rc.threads, 2u);
}

TEST(RunConfig, ReportsEveryInvalidKeyAtOnce) {
    try {
        parse_text(
            "gen.bogus = 1\n"
            "stage1.lr = not_a_number\n"
            "net.depht = 10\n"
            "threads = many\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("gen.bogus"), std::string::npos);
        EXPECT_NE(msg.find("net.depht"), std::string::npos);
        EXPECT_NE(msg.find("stage1.lr"), std::string::npos);
        EXPECT_NE(msg.find("threads"), std::string::npos);
    }
}

TEST(RunConfig, CrossFieldChecks) {
    EXPECT_THROW(parse_text("gen.k = 0\n"), ConfigError);
    EXPECT_THROW(parse_text("gen.n = 8\ngen.k = 9\n"), ConfigError);
    EXPECT_THROW(parse_text("net.depth = 4\nnet.depth_prime = 6\n"), ConfigError);
    EXPECT_THROW(parse_text("gen.m = 4\ngen.tau = 1,2\n"), ConfigError);
}

TEST(RunConfig, DepthPrimeDefaultsToDepth) {
    const RunConfig rc = parse_text("net.depth = 7\n");
    EXPECT_EQ(rc.stage1.depth, 7u);
    EXPECT_EQ(rc.stage1.depth_prime, 7u);
    EXPECT_EQ(rc.stage2.depth_prime, 7u);
}

TEST(RunConfig, TauScalarBroadcastsAtGeneration) {
    const RunConfig rc = parse_text("gen.m = 6\ngen.tau = 0.25\n");
    const DenseVector tau = rc.gen.expanded_tau();
    EXPECT_EQ(tau, DenseVector(6, 0.25));
}

TEST(RunConfig, ExperimentConfigCarriesEverything) {
    const RunConfig rc = parse_text(
        "exp.train_pairs = 77\n"
        "exp.test_pairs = 13\n"
        "biht.alpha = 0.5\n"
        "seed = 5\n");
    const ExperimentConfig ec = experiment_config(rc);
    EXPECT_EQ(ec.train_pairs, 77u);
    EXPECT_EQ(ec.test_pairs, 13u);
    EXPECT_EQ(ec.biht.alpha, 0.5);
    EXPECT_EQ(ec.seed, 5u);
}
