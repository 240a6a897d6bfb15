#include "chainlab/neural.hpp"

#include <algorithm>

namespace chainlab::nn {

namespace {

Matrix mask_penalty_col(const std::vector<int>& mask) {
    Matrix m(static_cast<Eigen::Index>(mask.size()), 1);
    for (std::size_t i = 0; i < mask.size(); ++i)
        m(static_cast<Eigen::Index>(i), 0) = mask[i] ? 0.0 : -ad::kMaskPenalty;
    return m;
}

bool any_masked(const std::vector<int>& mask) {
    return std::any_of(mask.begin(), mask.end(), [](int m) { return m == 0; });
}

// l x T matrix of column keep-flags for zeroing masked output columns.
Matrix keep_matrix(Eigen::Index rows, const std::vector<int>& mask) {
    Matrix k(rows, static_cast<Eigen::Index>(mask.size()));
    for (std::size_t c = 0; c < mask.size(); ++c)
        k.col(static_cast<Eigen::Index>(c)).setConstant(mask[c] ? 1.0 : 0.0);
    return k;
}

}  // namespace

Matrix mask_penalty_row(const std::vector<int>& mask) {
    Matrix m(1, static_cast<Eigen::Index>(mask.size()));
    for (std::size_t i = 0; i < mask.size(); ++i)
        m(0, static_cast<Eigen::Index>(i)) = mask[i] ? 0.0 : -ad::kMaskPenalty;
    return m;
}

Var bilstm(Tape& tape, Var input, const std::vector<int>& mask, const BiLstmParams& params) {
    const int T = static_cast<int>(mask.size());
    const int c = params.cell;
    if (input.cols() != T) throw ad::ShapeError("bilstm: mask length does not match columns");

    std::vector<int> live;
    for (int t = 0; t < T; ++t)
        if (mask[static_cast<std::size_t>(t)]) live.push_back(t);

    auto run_dir = [&](const LstmDirParams& dir, bool reverse) {
        std::vector<Var> states(static_cast<std::size_t>(T));
        Var W = tape.param(*dir.W);
        Var U = tape.param(*dir.U);
        Var b = tape.param(*dir.b);
        // Input projection for the whole sequence at once.
        Var proj = add(matmul(W, input), b);
        Var h = tape.leaf(Matrix::Zero(c, 1));
        Var cell = tape.leaf(Matrix::Zero(c, 1));
        std::vector<int> order = live;
        if (reverse) std::reverse(order.begin(), order.end());
        for (int t : order) {
            Var z = add(cols(proj, t, 1), matmul(U, h));
            Var i_g = sigmoid(rows(z, 0, c));
            Var f_g = sigmoid(rows(z, c, c));
            Var g_g = tanh(rows(z, 2 * c, c));
            Var o_g = sigmoid(rows(z, 3 * c, c));
            cell = add(mul(f_g, cell), mul(i_g, g_g));
            h = mul(o_g, tanh(cell));
            states[static_cast<std::size_t>(t)] = h;
        }
        return states;
    };

    std::vector<Var> fw = run_dir(params.fw, false);
    std::vector<Var> bw = run_dir(params.bw, true);

    Var zero_col = tape.leaf(Matrix::Zero(2 * c, 1));
    std::vector<Var> columns;
    columns.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        if (mask[static_cast<std::size_t>(t)])
            columns.push_back(concat_rows({fw[static_cast<std::size_t>(t)],
                                           bw[static_cast<std::size_t>(t)]}));
        else
            columns.push_back(zero_col);
    }
    return concat_cols(columns);
}

HiddenSeq encode(Tape& tape, const std::vector<int>& ids, const EncoderParams& params,
                 InputRole role, int pad_id) {
    (void)role;  // one shared encoder serves all three inputs
    const int l = 2 * params.rnn.cell;
    if (ids.empty()) {
        HiddenSeq out;
        out.h = tape.leaf(Matrix::Zero(l, 1));
        out.mask = {0};
        return out;
    }
    std::vector<int> mask(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] == pad_id ? 0 : 1;

    Var table = tape.param(*params.embed);
    Var emb = embed_rows(table, ids);
    HiddenSeq out;
    out.h = bilstm(tape, emb, mask, params.rnn);
    out.mask = std::move(mask);
    return out;
}

HiddenSeq attend(Tape& tape, const HiddenSeq& x, const HiddenSeq& ctx,
                 const AttentionParams& params, const AttnOpts& opts) {
    if (x.h.rows() != ctx.h.rows())
        throw ad::ShapeError("attend: hidden dims differ, " + std::to_string(x.h.rows()) +
                             " vs " + std::to_string(ctx.h.rows()));
    Var Wg = tape.param(*params.Wg);
    Var bg = tape.param(*params.bg);
    Var keys = add(matmul(Wg, x.h), bg);            // l x X, bias repeated along X
    Var scores = matmul(transpose(keys), ctx.h);    // X x C
    if (any_masked(x.mask)) scores = add(scores, tape.leaf(mask_penalty_col(x.mask)));
    Var weights = softmax_cols(scores);             // distribution over x per context column
    weights = dropout_mask(weights, opts.dropout, opts.seed, opts.training);
    Var mixed = matmul(x.h, weights);               // l x C
    if (any_masked(ctx.mask)) mixed = mul(mixed, tape.leaf(keep_matrix(mixed.rows(), ctx.mask)));
    HiddenSeq out;
    out.h = mixed;
    out.mask = ctx.mask;
    return out;
}

HiddenSeq co_match(Tape& tape, const HiddenSeq& q, const HiddenSeq& p1, const HiddenSeq& p2,
                   const CoMatchParams& params, const AttnOpts& opts) {
    AttnOpts o1 = opts;
    AttnOpts o2 = opts;
    o2.seed = opts.seed + 1;
    HiddenSeq matched_q = attend(tape, q, p2, params.att, o1);
    HiddenSeq matched_p1 = attend(tape, p1, p2, params.att, o2);
    Var joint = concat_rows({matched_q.h, matched_p1.h});  // 2l x P2
    HiddenSeq out;
    out.h = bilstm(tape, joint, p2.mask, params.fuse);
    out.mask = p2.mask;
    return out;
}

HiddenSeq reform_query(Tape& tape, const HiddenSeq& q, const HiddenSeq& p1,
                       const ReformParams& params, const AttnOpts& opts) {
    HiddenSeq matched = attend(tape, p1, q, params.att_q, opts);  // l x Q

    // Gate and candidate read the match in different argument orders.
    Var diff = sub(q.h, matched.h);
    Var gate_in = concat_rows({matched.h, q.h, diff});
    Var cand_in = concat_rows({q.h, matched.h, diff});
    Var gamma = sigmoid(matmul(tape.param(*params.Wg), gate_in));
    Var cand = tanh(matmul(tape.param(*params.W), cand_in));
    Var ones = tape.leaf(Matrix::Ones(gamma.rows(), gamma.cols()));
    Var reformed = add(mul(gamma, q.h), mul(sub(ones, gamma), cand));
    return {reformed, q.mask};
}

HiddenSeq query_reform(Tape& tape, const HiddenSeq& q, const HiddenSeq& p1, const HiddenSeq& p2,
                       const ReformParams& params, const AttnOpts& opts) {
    AttnOpts o1 = opts;
    AttnOpts o2 = opts;
    o2.seed = opts.seed + 1;
    AttnOpts o3 = opts;
    o3.seed = opts.seed + 2;

    HiddenSeq reformed_q = reform_query(tape, q, p1, params, o1);
    HiddenSeq matched_p2 = attend(tape, reformed_q, p2, params.att_p2, o2);

    HiddenSeq fused;
    fused.h = bilstm(tape, matched_p2.h, p2.mask, params.fuse);
    fused.mask = p2.mask;
    return self_att(tape, fused, params.self_att, o3);
}

HiddenSeq self_att(Tape& tape, const HiddenSeq& m, const AttentionParams& params,
                   const AttnOpts& opts) {
    HiddenSeq attended = attend(tape, m, m, params, opts);
    HiddenSeq out;
    out.h = add(m.h, attended.h);
    out.mask = m.mask;
    return out;
}

SpanScores span_head(Tape& tape, const HiddenSeq& m, const SpanHeadParams& params) {
    Var penalty = tape.leaf(mask_penalty_row(m.mask));
    SpanScores s;
    s.start_logits = add(matmul(transpose(tape.param(*params.w_start)), m.h), penalty);
    s.end_logits = add(matmul(transpose(tape.param(*params.w_end)), m.h), penalty);
    s.mask = m.mask;
    return s;
}

std::pair<int, int> decode_span(const Matrix& start_logits, const Matrix& end_logits,
                                const std::vector<int>& mask, int max_len) {
    if (max_len < 1) throw std::invalid_argument("decode_span: max_len must be >= 1");
    const int n = static_cast<int>(mask.size());
    if (start_logits.cols() != n || end_logits.cols() != n)
        throw ad::ShapeError("decode_span: logit length does not match mask");
    double best = -std::numeric_limits<double>::infinity();
    int bs = -1, be = -1;
    for (int s = 0; s < n; ++s) {
        if (!mask[static_cast<std::size_t>(s)]) continue;
        for (int e = s; e < std::min(n, s + max_len); ++e) {
            if (!mask[static_cast<std::size_t>(e)]) continue;
            double score = start_logits(0, s) + end_logits(0, e);
            if (score > best) {
                best = score;
                bs = s;
                be = e;
            }
        }
    }
    if (bs < 0) throw std::runtime_error("decode_span: all positions masked");
    return {bs, be};
}

}  // namespace chainlab::nn
