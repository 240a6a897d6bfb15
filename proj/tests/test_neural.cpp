#include "chainlab/neural.hpp"

#include <doctest.h>

#include <cmath>

using namespace chainlab;
using ad::Matrix;
using ad::ParamStore;
using ad::Tape;
using ad::Var;
using nn::HiddenSeq;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i)
            m(i, j) = (2.0 * ad::uniform01(rng) - 1.0) * scale;
    return m;
}

std::vector<int> ones_mask(int n) { return std::vector<int>(static_cast<std::size_t>(n), 1); }

nn::AttentionParams make_attention(ParamStore& store, const std::string& prefix, int l,
                                   std::uint64_t& rng) {
    ad::init_uniform(store.create(prefix + ".Wg", l, l), 0.5, rng);
    ad::init_uniform(store.create(prefix + ".bg", l, 1), 0.5, rng);
    return {&store.at(prefix + ".Wg"), &store.at(prefix + ".bg")};
}

nn::BiLstmParams make_bilstm(ParamStore& store, const std::string& prefix, int in_dim, int cell,
                             std::uint64_t& rng) {
    nn::BiLstmParams p;
    p.cell = cell;
    for (const char* dir : {"fw", "bw"}) {
        ad::init_uniform(store.create(prefix + "." + dir + ".W", 4 * cell, in_dim), 0.5, rng);
        ad::init_uniform(store.create(prefix + "." + dir + ".U", 4 * cell, cell), 0.5, rng);
        ad::init_uniform(store.create(prefix + "." + dir + ".b", 4 * cell, 1), 0.5, rng);
    }
    p.fw = {&store.at(prefix + ".fw.W"), &store.at(prefix + ".fw.U"), &store.at(prefix + ".fw.b")};
    p.bw = {&store.at(prefix + ".bw.W"), &store.at(prefix + ".bw.U"), &store.at(prefix + ".bw.b")};
    return p;
}

nn::CoMatchParams make_comatch(ParamStore& store, int l, std::uint64_t& rng) {
    nn::CoMatchParams p;
    p.att = make_attention(store, "cm.att", l, rng);
    p.fuse = make_bilstm(store, "cm.fuse", 2 * l, l / 2, rng);
    return p;
}

nn::ReformParams make_reform(ParamStore& store, int l, std::uint64_t& rng) {
    nn::ReformParams p;
    p.att_q = make_attention(store, "rf.att1", l, rng);
    p.att_p2 = make_attention(store, "rf.att2", l, rng);
    ad::init_uniform(store.create("rf.W", l, 3 * l), 0.5, rng);
    ad::init_uniform(store.create("rf.Wg", l, 3 * l), 0.5, rng);
    p.W = &store.at("rf.W");
    p.Wg = &store.at("rf.Wg");
    p.fuse = make_bilstm(store, "rf.fuse", l, l / 2, rng);
    p.self_att = make_attention(store, "rf.self", l, rng);
    return p;
}

nn::SpanHeadParams make_span(ParamStore& store, int l, std::uint64_t& rng) {
    ad::init_uniform(store.create("span.ws", l, 1), 0.5, rng);
    ad::init_uniform(store.create("span.we", l, 1), 0.5, rng);
    return {&store.at("span.ws"), &store.at("span.we")};
}

// Checked functions are scaled down so that roundoff in the central
// difference stays below the 1e-4 tolerance against the 1e-8 denominator
// floor. The attention bias has an exactly-zero gradient (a per-column score
// shift cancels in the softmax), so its finite difference measures pure
// noise, which scales with |f|. Gradients are chain-rule-identical up to the
// constant.
constexpr double kFdScale = 0.01;
constexpr double kFdEps = 3e-5;

}  // namespace

TEST_CASE("attend with a single x position repeats that column") {
    ParamStore store;
    std::uint64_t rng = 1;
    nn::AttentionParams att = make_attention(store, "att", 3, rng);
    Tape t;
    Matrix xv = random_matrix(3, 1, rng);
    HiddenSeq x{t.leaf(xv), ones_mask(1)};
    HiddenSeq ctx{t.leaf(random_matrix(3, 4, rng)), ones_mask(4)};
    HiddenSeq out = nn::attend(t, x, ctx, att);
    REQUIRE(out.h.cols() == 4);
    for (int c = 0; c < 4; ++c)
        CHECK((out.h.value().col(c) - xv.col(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attend hand fixture at l=1") {
    ParamStore store;
    store.create("att.Wg", 1, 1).value << 1.0;
    store.create("att.bg", 1, 1).value << 0.0;
    nn::AttentionParams att{&store.at("att.Wg"), &store.at("att.bg")};
    Tape t;
    Matrix hx(1, 2);
    hx << 0.0, std::log(3.0);
    Matrix hctx(1, 2);
    hctx << 1.0, 1.0;
    HiddenSeq x{t.leaf(hx), ones_mask(2)};
    HiddenSeq ctx{t.leaf(hctx), ones_mask(2)};
    Matrix out = nn::attend(t, x, ctx, att).h.value();
    double expect = 0.75 * std::log(3.0);
    CHECK(out(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("attention weights over unmasked positions sum to one") {
    // Probe row of ones: the output first row equals the per-column weight sum.
    ParamStore store;
    std::uint64_t rng = 5;
    nn::AttentionParams att = make_attention(store, "att", 2, rng);
    Tape t;
    Matrix hx = random_matrix(2, 6, rng);
    hx.row(0).setOnes();
    std::vector<int> xmask = {1, 1, 0, 1, 0, 1};
    HiddenSeq x{t.leaf(hx), xmask};
    HiddenSeq ctx{t.leaf(random_matrix(2, 5, rng)), ones_mask(5)};
    Matrix out = nn::attend(t, x, ctx, att).h.value();
    for (int c = 0; c < 5; ++c) CHECK(std::abs(out(0, c) - 1.0) < 1e-9);
}

TEST_CASE("attend dimension mismatch is rejected") {
    ParamStore store;
    std::uint64_t rng = 6;
    nn::AttentionParams att = make_attention(store, "att", 3, rng);
    Tape t;
    HiddenSeq x{t.leaf(random_matrix(3, 2, rng)), ones_mask(2)};
    HiddenSeq ctx{t.leaf(random_matrix(4, 2, rng)), ones_mask(2)};
    CHECK_THROWS_AS(nn::attend(t, x, ctx, att), ad::ShapeError);
}

TEST_CASE("attend PAD invariance on both sides") {
    ParamStore store;
    std::uint64_t rng = 7;
    const int l = 4;
    nn::AttentionParams att = make_attention(store, "att", l, rng);
    Matrix hx = random_matrix(l, 3, rng);
    Matrix hctx = random_matrix(l, 5, rng);

    Tape t1;
    Matrix base =
        nn::attend(t1, {t1.leaf(hx), ones_mask(3)}, {t1.leaf(hctx), ones_mask(5)}, att).h.value();

    Matrix hx_pad(l, 5);
    hx_pad << hx, Matrix::Zero(l, 2);
    Matrix hctx_pad(l, 6);
    hctx_pad << hctx, Matrix::Zero(l, 1);
    std::vector<int> xmask = {1, 1, 1, 0, 0};
    std::vector<int> cmask = {1, 1, 1, 1, 1, 0};
    Tape t2;
    Matrix padded =
        nn::attend(t2, {t2.leaf(hx_pad), xmask}, {t2.leaf(hctx_pad), cmask}, att).h.value();
    CHECK((padded.leftCols(5) - base).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(padded.col(5).cwiseAbs().maxCoeff() == 0.0);  // masked ctx column zeroed
}

TEST_CASE("bilstm length-1 output equals a hand-stepped cell") {
    ParamStore store;
    std::uint64_t rng = 9;
    const int in_dim = 3, cell = 2;
    nn::BiLstmParams p = make_bilstm(store, "rnn", in_dim, cell, rng);
    Matrix x = random_matrix(in_dim, 1, rng);

    Tape t;
    Matrix out = nn::bilstm(t, t.leaf(x), ones_mask(1), p).value();

    auto step = [&](const nn::LstmDirParams& dir) {
        Eigen::VectorXd z = dir.W->value * x + dir.b->value;  // h0 = 0 drops the U term
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        Eigen::VectorXd h(cell);
        for (int i = 0; i < cell; ++i) {
            double ig = sig(z(i));
            double gg = std::tanh(z(2 * cell + i));
            double og = sig(z(3 * cell + i));
            double cv = ig * gg;  // c0 = 0 drops the forget term
            h(i) = og * std::tanh(cv);
        }
        return h;
    };
    Eigen::VectorXd expect(2 * cell);
    expect << step(p.fw), step(p.bw);
    CHECK((out.col(0) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bilstm skips masked columns and zeroes them") {
    ParamStore store;
    std::uint64_t rng = 10;
    nn::BiLstmParams p = make_bilstm(store, "rnn", 2, 2, rng);
    Matrix x = random_matrix(2, 3, rng);

    Tape t1;
    Matrix base = nn::bilstm(t1, t1.leaf(x), ones_mask(3), p).value();

    Matrix x_pad(2, 5);
    x_pad << x, random_matrix(2, 2, rng);  // junk in PAD columns must not leak
    std::vector<int> mask = {1, 1, 1, 0, 0};
    Tape t2;
    Matrix padded = nn::bilstm(t2, t2.leaf(x_pad), mask, p).value();
    CHECK((padded.leftCols(3) - base).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(padded.rightCols(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode contract") {
    ParamStore store;
    std::uint64_t rng = 11;
    const int d = 3, cell = 2, l = 2 * cell;
    ad::init_uniform(store.create("embed", 9, d), 0.5, rng);
    nn::EncoderParams enc;
    enc.embed = &store.at("embed");
    enc.rnn = make_bilstm(store, "enc", d, cell, rng);

    Tape t;
    HiddenSeq h = nn::encode(t, {2, 5, 3, 8}, enc, nn::InputRole::question);
    CHECK(h.h.rows() == l);
    CHECK(h.h.cols() == 4);
    CHECK(h.mask == ones_mask(4));

    HiddenSeq empty = nn::encode(t, {}, enc, nn::InputRole::passage1);
    CHECK(empty.h.cols() == 1);
    CHECK(empty.mask == std::vector<int>{0});
    CHECK(empty.h.value().cwiseAbs().maxCoeff() == 0.0);

    // appending PAD ids changes nothing at real positions
    Tape t2;
    HiddenSeq padded = nn::encode(t2, {2, 5, 3, 8, 0, 0}, enc, nn::InputRole::question);
    CHECK((padded.h.value().leftCols(4) - h.h.value()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(padded.mask == std::vector<int>{1, 1, 1, 1, 0, 0});
}

TEST_CASE("co_match shape, sharing, and asymmetry") {
    ParamStore store;
    std::uint64_t rng = 13;
    const int l = 4;
    nn::CoMatchParams cm = make_comatch(store, l, rng);

    Matrix hq = random_matrix(l, 3, rng);
    Matrix hp1 = random_matrix(l, 5, rng);
    Matrix hp2 = random_matrix(l, 7, rng);

    Tape t;
    HiddenSeq q{t.leaf(hq), ones_mask(3)};
    HiddenSeq p1{t.leaf(hp1), ones_mask(5)};
    HiddenSeq p2{t.leaf(hp2), ones_mask(7)};
    HiddenSeq m = nn::co_match(t, q, p1, p2, cm);
    CHECK(m.h.rows() == l);
    CHECK(m.h.cols() == 7);  // length P2, independent of Q and P1

    // Both matching directions bind the identical attention storage: the
    // shared slots appear exactly once on the tape.
    CHECK(t.bindings(*cm.att.Wg) == 1);
    CHECK(t.bindings(*cm.att.bg) == 1);
    CHECK(cm.att.Wg == &store.at("cm.att.Wg"));

    // duplicated-passage control is well-defined and deterministic
    Tape t2, t3;
    HiddenSeq a = nn::co_match(t2, {t2.leaf(hq), ones_mask(3)}, {t2.leaf(hp2), ones_mask(7)},
                               {t2.leaf(hp2), ones_mask(7)}, cm);
    HiddenSeq b = nn::co_match(t3, {t3.leaf(hq), ones_mask(3)}, {t3.leaf(hp2), ones_mask(7)},
                               {t3.leaf(hp2), ones_mask(7)}, cm);
    CHECK(a.h.value().isApprox(b.h.value(), 0.0));

    // swapping q and p1 permutes the fused halves: output differs
    Tape t4;
    HiddenSeq swapped = nn::co_match(t4, {t4.leaf(hp1), ones_mask(5)}, {t4.leaf(hq), ones_mask(3)},
                                     {t4.leaf(hp2), ones_mask(7)}, cm);
    CHECK((swapped.h.value() - m.h.value()).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("shared attention slot receives gradient from both branches") {
    ParamStore store;
    std::uint64_t rng = 14;
    const int l = 4;
    nn::CoMatchParams cm = make_comatch(store, l, rng);
    store.zero_grads();
    Tape t;
    HiddenSeq q{t.leaf(random_matrix(l, 3, rng)), ones_mask(3)};
    HiddenSeq p1{t.leaf(random_matrix(l, 5, rng)), ones_mask(5)};
    HiddenSeq p2{t.leaf(random_matrix(l, 7, rng)), ones_mask(7)};
    t.backward(ad::sum(nn::co_match(t, q, p1, p2, cm).h));
    CHECK(cm.att.Wg->grad.cwiseAbs().maxCoeff() > 0.0);
    CHECK(cm.att.bg->grad.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("reform_query gate saturation pins the output to Hq") {
    ParamStore store;
    std::uint64_t rng = 15;
    const int l = 3;
    nn::ReformParams rf = make_reform(store, l, rng);
    // Gate pre-activation = K * Hq (middle block of [match : Hq : diff]);
    // with Hq strictly positive the gate saturates at 1 and Mq == Hq.
    rf.Wg->value.setZero();
    rf.Wg->value.block(0, l, l, l) = 100.0 * Matrix::Identity(l, l);

    Tape t;
    Matrix hq = Matrix::Ones(l, 4) + random_matrix(l, 4, rng, 0.2).cwiseAbs();
    HiddenSeq q{t.leaf(hq), ones_mask(4)};
    HiddenSeq p1{t.leaf(random_matrix(l, 5, rng)), ones_mask(5)};
    HiddenSeq mq = nn::reform_query(t, q, p1, rf);
    CHECK((mq.h.value() - hq).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("reform_query output is a convex mix of Hq and the candidate") {
    ParamStore store;
    std::uint64_t rng = 16;
    const int l = 4;
    nn::ReformParams rf = make_reform(store, l, rng);

    Matrix hq = random_matrix(l, 3, rng);
    Matrix hp1 = random_matrix(l, 5, rng);

    Tape t;
    HiddenSeq q{t.leaf(hq), ones_mask(3)};
    HiddenSeq p1{t.leaf(hp1), ones_mask(5)};
    Matrix mq = nn::reform_query(t, q, p1, rf).h.value();

    // Recompute the candidate through the same ops.
    HiddenSeq match = nn::attend(t, p1, q, rf.att_q);
    Var diff = nn::sub(q.h, match.h);
    Matrix cand =
        nn::tanh(nn::matmul(t.param(*rf.W), nn::concat_rows({q.h, match.h, diff}))).value();
    for (Eigen::Index c = 0; c < mq.cols(); ++c) {
        for (Eigen::Index r = 0; r < mq.rows(); ++r) {
            double lo = std::min(hq(r, c), cand(r, c));
            double hi = std::max(hq(r, c), cand(r, c));
            CHECK(mq(r, c) >= lo - 1e-12);
            CHECK(mq(r, c) <= hi + 1e-12);
        }
    }
}

TEST_CASE("query_reform output spans P2") {
    ParamStore store;
    std::uint64_t rng = 17;
    const int l = 4;
    nn::ReformParams rf = make_reform(store, l, rng);
    Tape t;
    HiddenSeq q{t.leaf(random_matrix(l, 3, rng)), ones_mask(3)};
    HiddenSeq p1{t.leaf(random_matrix(l, 5, rng)), ones_mask(5)};
    HiddenSeq p2{t.leaf(random_matrix(l, 6, rng)), ones_mask(6)};
    HiddenSeq m = nn::query_reform(t, q, p1, p2, rf);
    CHECK(m.h.rows() == l);
    CHECK(m.h.cols() == 6);
}

TEST_CASE("self_att keeps the shape and doubles a single position") {
    ParamStore store;
    std::uint64_t rng = 18;
    const int l = 3;
    nn::AttentionParams att = make_attention(store, "self", l, rng);
    Tape t;
    Matrix mv = random_matrix(l, 1, rng);
    HiddenSeq m{t.leaf(mv), ones_mask(1)};
    HiddenSeq out = nn::self_att(t, m, att);
    CHECK(out.h.rows() == l);
    CHECK(out.h.cols() == 1);
    CHECK((out.h.value() - 2.0 * mv).cwiseAbs().maxCoeff() < 1e-12);

    Tape t2;
    HiddenSeq wide{t2.leaf(random_matrix(l, 5, rng)), ones_mask(5)};
    CHECK(nn::self_att(t2, wide, att).h.cols() == 5);
}

TEST_CASE("span head reads rows and respects masks") {
    ParamStore store;
    std::uint64_t rng = 19;
    const int l = 4;
    nn::SpanHeadParams sp = make_span(store, l, rng);
    Matrix mv = random_matrix(l, 6, rng);

    // basis-vector start weight selects a row of M
    sp.w_start->value.setZero();
    sp.w_start->value(2, 0) = 1.0;
    Tape t;
    std::vector<int> mask = {1, 1, 1, 1, 1, 0};
    nn::SpanScores s = nn::span_head(t, {t.leaf(mv), mask}, sp);
    CHECK(s.start_logits.cols() == 6);
    CHECK(s.end_logits.cols() == 6);
    for (int c = 0; c < 5; ++c)
        CHECK(s.start_logits.value()(0, c) == doctest::Approx(mv(2, c)).epsilon(1e-12));
    CHECK(s.start_logits.value()(0, 5) < -1e29);  // masked position

    // PAD column never wins the argmax
    Eigen::Index arg;
    s.start_logits.value().row(0).maxCoeff(&arg);
    CHECK(arg != 5);
}

TEST_CASE("decode_span fixtures") {
    std::vector<int> mask = {1, 1};
    Matrix start(1, 2), end(1, 2);
    start << 2, 0;
    end << 0, 1;
    // pairs: (0,0)=2, (0,1)=3, (1,1)=1
    CHECK(nn::decode_span(start, end, mask, 2) == std::pair<int, int>{0, 1});
    CHECK(nn::decode_span(start, end, mask, 1) == std::pair<int, int>{0, 0});

    std::vector<int> single = {0, 1, 0};
    Matrix s3 = Matrix::Zero(1, 3), e3 = Matrix::Zero(1, 3);
    CHECK(nn::decode_span(s3, e3, single, 4) == std::pair<int, int>{1, 1});

    CHECK_THROWS(nn::decode_span(s3, e3, {0, 0, 0}, 2));
    CHECK_THROWS(nn::decode_span(s3, e3, single, 0));

    // ties break toward the smaller start then smaller end
    Matrix zs = Matrix::Zero(1, 3), ze = Matrix::Zero(1, 3);
    CHECK(nn::decode_span(zs, ze, {1, 1, 1}, 3) == std::pair<int, int>{0, 0});
}

TEST_CASE("decode_span agrees with brute-force enumeration") {
    std::uint64_t rng = 20;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(ad::rand_below(rng, 7));
        Matrix start = random_matrix(1, n, rng, 3.0);
        Matrix end = random_matrix(1, n, rng, 3.0);
        std::vector<int> mask;
        int live = 0;
        for (int i = 0; i < n; ++i) {
            int m = ad::rand_below(rng, 4) > 0 ? 1 : 0;
            mask.push_back(m);
            live += m;
        }
        if (live == 0) {
            mask[static_cast<std::size_t>(ad::rand_below(rng, n))] = 1;
        }
        const int max_len = 1 + static_cast<int>(ad::rand_below(rng, 4));

        double best = -1e300;
        std::pair<int, int> expect{-1, -1};
        for (int s = 0; s < n; ++s) {
            if (!mask[static_cast<std::size_t>(s)]) continue;
            for (int e = s; e < std::min(n, s + max_len); ++e) {
                if (!mask[static_cast<std::size_t>(e)]) continue;
                double sc = start(0, s) + end(0, e);
                if (sc > best) {
                    best = sc;
                    expect = {s, e};
                }
            }
        }
        CHECK(nn::decode_span(start, end, mask, max_len) == expect);
    }
}

TEST_CASE("grad_check through each layer stack") {
    const int l = 4;

    SUBCASE("attend") {
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            ParamStore store;
            std::uint64_t rng = seed;
            nn::AttentionParams att = make_attention(store, "att", l, rng);
            Matrix hx = random_matrix(l, 3, rng);
            Matrix hctx = random_matrix(l, 4, rng);
            ad::init_uniform(store.create("in.x", l, 3), 1.0, rng);
            store.at("in.x").value = hx;
            ad::init_uniform(store.create("in.ctx", l, 4), 1.0, rng);
            store.at("in.ctx").value = hctx;
            auto f = [&](Tape& t) {
                HiddenSeq x{t.param(store.at("in.x")), ones_mask(3)};
                HiddenSeq ctx{t.param(store.at("in.ctx")), ones_mask(4)};
                return ad::scale(ad::sum(ad::tanh(nn::attend(t, x, ctx, att).h)), kFdScale);
            };
            worst = std::max(worst, ad::grad_check_params(f, store, {}, kFdEps));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("self_att") {
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            ParamStore store;
            std::uint64_t rng = seed * 31;
            nn::AttentionParams att = make_attention(store, "self", l, rng);
            store.create("in.m", l, 5).value = random_matrix(l, 5, rng);
            auto f = [&](Tape& t) {
                HiddenSeq m{t.param(store.at("in.m")), ones_mask(5)};
                return ad::scale(ad::sum(ad::sigmoid(nn::self_att(t, m, att).h)), kFdScale);
            };
            worst = std::max(worst, ad::grad_check_params(f, store, {}, kFdEps));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("bilstm") {
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            ParamStore store;
            std::uint64_t rng = seed * 57;
            nn::BiLstmParams p = make_bilstm(store, "rnn", 3, 2, rng);
            store.create("in.x", 3, 4).value = random_matrix(3, 4, rng);
            auto f = [&](Tape& t) {
                return ad::scale(ad::sum(nn::bilstm(t, t.param(store.at("in.x")), ones_mask(4), p)), kFdScale);
            };
            worst = std::max(worst, ad::grad_check_params(f, store, {}, kFdEps));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("co_match and query_reform") {
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            ParamStore store;
            std::uint64_t rng = seed * 13;
            nn::CoMatchParams cm = make_comatch(store, l, rng);
            nn::ReformParams rf = make_reform(store, l, rng);
            store.create("in.q", l, 3).value = random_matrix(l, 3, rng);
            store.create("in.p1", l, 4).value = random_matrix(l, 4, rng);
            store.create("in.p2", l, 5).value = random_matrix(l, 5, rng);
            auto fc = [&](Tape& t) {
                HiddenSeq q{t.param(store.at("in.q")), ones_mask(3)};
                HiddenSeq p1{t.param(store.at("in.p1")), ones_mask(4)};
                HiddenSeq p2{t.param(store.at("in.p2")), ones_mask(5)};
                return ad::scale(ad::sum(ad::tanh(nn::co_match(t, q, p1, p2, cm).h)), kFdScale);
            };
            auto fr = [&](Tape& t) {
                HiddenSeq q{t.param(store.at("in.q")), ones_mask(3)};
                HiddenSeq p1{t.param(store.at("in.p1")), ones_mask(4)};
                HiddenSeq p2{t.param(store.at("in.p2")), ones_mask(5)};
                return ad::scale(ad::sum(ad::tanh(nn::query_reform(t, q, p1, p2, rf).h)), kFdScale);
            };
            worst = std::max(worst, ad::grad_check_params(fc, store, {}, kFdEps));
            worst = std::max(worst, ad::grad_check_params(fr, store, {}, kFdEps));
        }
        CHECK(worst < 1e-4);
    }
}
