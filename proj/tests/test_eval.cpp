#include "toib/eval.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "toib/data.hpp"
#include "toib/training.hpp"

using namespace toib;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.n_users = 2;
    cfg.epochs = 2;
    cfg.batch = 16;
    cfg.latent_dim = 4;
    cfg.enc_hidden = {16};
    cfg.dec_hidden = {16};
    cfg.club_hidden = {16};
    cfg.lr = 1e-3;
    cfg.seed = 5;
    return cfg;
}

GenSpec tiny_gen(size_t users = 2) {
    GenSpec g;
    g.k = 4;
    g.d_x = 4;
    g.n_per_user = 200;
    g.n_users = users;
    g.seed = 9;
    return g;
}

std::vector<Dataset> make_data(const GenSpec& g) {
    Rng rng(g.seed);
    return gen_synthetic(g, rng);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

uint64_t param_hash(const RunState& st) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : st.main_params())
        for (const double v : p.values()) {
            uint64_t bits;
            std::memcpy(&bits, &v, 8);
            h ^= bits;
            h *= 1099511628211ull;
        }
    return h;
}

}  // namespace

TEST(Evaluate, ZeroDecoderPredictsFirstClassAtChance) {
    TrainConfig cfg = tiny_config();
    const auto data = make_data(tiny_gen());
    RunState st = init_run(cfg, 4, 4);
    // Zero the decoders: uniform logits, ties break to class 1, so accuracy
    // equals the frequency of class 1 among drawn labels, about 1/K.
    for (auto& dec : st.decoders) {
        std::vector<Tensor> ps;
        dec.collect_params(ps);
        for (auto& p : ps) std::fill(p.values().begin(), p.values().end(), 0.0);
    }
    EvalOptions opt;
    opt.n_eval = 200;
    Rng rng(31);
    const auto res = evaluate_accuracy(st, data, 5.0, opt, rng);
    const double band = 3.0 * std::sqrt(0.25 * 0.75 / 200.0);
    for (const double acc : res.accuracy) EXPECT_NEAR(acc, 0.25, band);
}

TEST(Evaluate, NeverMutatesParameters) {
    TrainConfig cfg = tiny_config();
    const auto data = make_data(tiny_gen());
    RunState st = init_run(cfg, 4, 4);
    const uint64_t before = param_hash(st);
    EvalOptions opt;
    opt.n_eval = 64;
    Rng rng(3);
    evaluate_accuracy(st, data, 0.0, opt, rng);
    Rng rng2(4);
    cross_decode(st, data, 0.0,
                 [] {
                     EvalOptions o;
                     o.n_eval = 64;
                     o.label_mode = LabelMode::independent;
                     return o;
                 }(),
                 rng2);
    EXPECT_EQ(param_hash(st), before);
}

TEST(Evaluate, NEvalBeyondDatasetRejected) {
    TrainConfig cfg = tiny_config();
    const auto data = make_data(tiny_gen());
    RunState st = init_run(cfg, 4, 4);
    EvalOptions opt;
    opt.n_eval = 10000;
    Rng rng(3);
    EXPECT_THROW(evaluate_accuracy(st, data, 5.0, opt, rng), ContractError);
}

TEST(Sweep, EmptyListGivesHeaderOnlyCsv) {
    TrainConfig cfg = tiny_config();
    const auto data = make_data(tiny_gen());
    RunState st = init_run(cfg, 4, 4);
    EvalOptions opt;
    opt.n_eval = 32;
    const auto res = sweep_snr(st, data, {}, opt, 7);
    const std::string path = "/tmp/toib_test_sweep_empty.csv";
    write_sweep_csv(res, path);
    EXPECT_EQ(slurp(path), "snr_db,user,accuracy,ce\n");
    std::remove(path.c_str());
}

TEST(Sweep, DefaultGridRowCountAndDuplicates) {
    TrainConfig cfg = tiny_config();
    const auto data = make_data(tiny_gen());
    RunState st = init_run(cfg, 4, 4);
    EvalOptions opt;
    opt.n_eval = 32;
    const auto res = sweep_snr(st, data, {-5, 0, 5, 10, 15, 20}, opt, 7);
    const std::string path = "/tmp/toib_test_sweep_grid.csv";
    write_sweep_csv(res, path);
    std::string contents = slurp(path);
    size_t rows = 0;
    for (const char c : contents) rows += c == '\n';
    EXPECT_EQ(rows, 1u + 6 * cfg.n_users);
    std::remove(path.c_str());

    const auto dup = sweep_snr(st, data, {0, 0}, opt, 7);
    ASSERT_EQ(dup.snr_db.size(), 2u);
    EXPECT_EQ(dup.per_snr[0].accuracy, dup.per_snr[1].accuracy);  // value-keyed substream
}

TEST(Sweep, ByteIdenticalAcrossRuns) {
    TrainConfig cfg = tiny_config();
    const auto data = make_data(tiny_gen());
    RunState st = init_run(cfg, 4, 4);
    EvalOptions opt;
    opt.n_eval = 48;
    const std::string p1 = "/tmp/toib_test_sweep_a.csv", p2 = "/tmp/toib_test_sweep_b.csv";
    write_sweep_csv(sweep_snr(st, data, {-5, 0, 5}, opt, 11), p1);
    write_sweep_csv(sweep_snr(st, data, {-5, 0, 5}, opt, 11), p2);
    EXPECT_EQ(slurp(p1), slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST(CrossDecode, SharedLabelsRejected) {
    TrainConfig cfg = tiny_config();
    const auto data = make_data(tiny_gen());
    RunState st = init_run(cfg, 4, 4);
    EvalOptions opt;
    opt.label_mode = LabelMode::shared;
    Rng rng(1);
    EXPECT_THROW(cross_decode(st, data, 0.0, opt, rng), ContractError);
}

TEST(CrossDecode, SingleUserReducesToEvaluateAccuracy) {
    TrainConfig cfg = tiny_config();
    cfg.n_users = 1;
    const auto data = make_data(tiny_gen(1));
    RunState st = init_run(cfg, 4, 4);
    EvalOptions opt;
    opt.n_eval = 96;
    opt.label_mode = LabelMode::independent;
    Rng r1(21), r2(21);
    const auto m = cross_decode(st, data, 0.0, opt, r1);
    const auto acc = evaluate_accuracy(st, data, 0.0, opt, r2);
    ASSERT_EQ(m.n, 1u);
    EXPECT_DOUBLE_EQ(m.at(0, 0), acc.accuracy[0]);
}

TEST(CrossDecode, CsvFormat) {
    CrossDecodeMatrix m;
    m.n = 2;
    m.acc = {0.9, 0.25, 0.3, 0.875};
    const std::string path = "/tmp/toib_test_cross.csv";
    write_crossdecode_csv(m, path);
    EXPECT_EQ(slurp(path), "decoder,target_user,accuracy\n0,0,0.9\n0,1,0.25\n1,0,0.3\n1,1,0.875\n");
    std::remove(path.c_str());
}

TEST(ExportLatents, RowCountAndDeterminism) {
    TrainConfig cfg = tiny_config();
    const auto data = make_data(tiny_gen());
    RunState st = init_run(cfg, 4, 4);
    const std::string p1 = "/tmp/toib_test_lat_a.csv", p2 = "/tmp/toib_test_lat_b.csv";
    Rng r1(5), r2(5);
    export_latents(st, data, 50, p1, r1);
    export_latents(st, data, 50, p2, r2);
    const std::string contents = slurp(p1);
    EXPECT_EQ(contents, slurp(p2));

    size_t rows = 0;
    for (const char c : contents) rows += c == '\n';
    EXPECT_EQ(rows, 1u + 50 * cfg.n_users);
    EXPECT_EQ(contents.substr(0, contents.find('\n')), "user,label,z_1,z_2,z_3,z_4");
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}
