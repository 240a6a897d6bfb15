#pragma once

// Model layers: shared BiLSTM encoder, bilinear-bias attention used by every
// matching step, co-matching fusion, gated query reformulation,
// self-attention, and the span head.

#include "chainlab/tensor.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace chainlab::nn {

using ad::Matrix;
using ad::ParamSlot;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

using ad::add;
using ad::cols;
using ad::concat_cols;
using ad::concat_rows;
using ad::dropout_mask;
using ad::embed_rows;
using ad::log_sum_exp_cols;
using ad::matmul;
using ad::mul;
using ad::pick;
using ad::rows;
using ad::scale;
using ad::sigmoid;
using ad::softmax_cols;
using ad::sub;
using ad::sum;
using ad::tanh;
using ad::transpose;

// Hidden sequence in the column convention: an l x T matrix whose column t
// encodes token t, plus a 0/1 mask of real (non-PAD) positions.
struct HiddenSeq {
    Var h;
    std::vector<int> mask;

    int len() const { return static_cast<int>(mask.size()); }
};

struct AttentionParams {
    ParamSlot* Wg = nullptr;  // l x l
    ParamSlot* bg = nullptr;  // l x 1
};

struct LstmDirParams {
    ParamSlot* W = nullptr;  // 4c x in
    ParamSlot* U = nullptr;  // 4c x c
    ParamSlot* b = nullptr;  // 4c x 1
};

struct BiLstmParams {
    LstmDirParams fw, bw;
    int cell = 0;  // per-direction size; output dim is 2*cell
};

struct EncoderParams {
    ParamSlot* embed = nullptr;  // |V| x d
    BiLstmParams rnn;
};

struct ReformParams {
    AttentionParams att_q;   // matches p1 against the question
    AttentionParams att_p2;  // matches the reformulated question against p2
    ParamSlot* W = nullptr;   // l x 3l
    ParamSlot* Wg = nullptr;  // l x 3l, gate
    BiLstmParams fuse;        // input l -> output l
    AttentionParams self_att;
};

struct CoMatchParams {
    AttentionParams att;  // one pair, shared by both matching directions
    BiLstmParams fuse;    // input 2l -> output l
};

struct SpanHeadParams {
    ParamSlot* w_start = nullptr;  // l x 1
    ParamSlot* w_end = nullptr;    // l x 1
};

struct AttnOpts {
    double dropout = 0.0;
    std::uint64_t seed = 0;
    bool training = false;
};

enum class InputRole { question, passage1, passage2 };

/// Embedding lookup followed by a single-layer BiLSTM. Masked (PAD) ids are
/// skipped by the recurrence and their output columns are zero. An empty
/// sequence encodes to a single fully-masked zero column.
HiddenSeq encode(Tape& tape, const std::vector<int>& ids, const EncoderParams& params,
                 InputRole role, int pad_id = 0);

/// BiLSTM over the columns of `input` (in x T -> 2*cell x T), skipping masked
/// columns; masked output columns are zero.
Var bilstm(Tape& tape, Var input, const std::vector<int>& mask, const BiLstmParams& params);

/// S = (Wg * H_x + bg (x) e)^T * H_ctx, masked-x rows excluded, softmax over
/// the x dimension per context column, output H_x * G. The result carries the
/// context mask and zeroed masked columns.
HiddenSeq attend(Tape& tape, const HiddenSeq& x, const HiddenSeq& ctx,
                 const AttentionParams& params, const AttnOpts& opts = {});

/// Matches question and context passage against the answer passage with one
/// shared attention parameter pair, then fuses both matched sequences with a
/// BiLSTM. Output length equals the answer passage length.
HiddenSeq co_match(Tape& tape, const HiddenSeq& q, const HiddenSeq& p1, const HiddenSeq& p2,
                   const CoMatchParams& params, const AttnOpts& opts = {});

/// The gated update of the question representation from its match with the
/// first passage: gamma * Hq + (1 - gamma) * tanh(W [Hq : match : Hq - match]).
HiddenSeq reform_query(Tape& tape, const HiddenSeq& q, const HiddenSeq& p1,
                       const ReformParams& params, const AttnOpts& opts = {});

/// Gated reformulation of the question from its match with the first passage,
/// followed by matching against the answer passage, fusion, and
/// self-attention.
HiddenSeq query_reform(Tape& tape, const HiddenSeq& q, const HiddenSeq& p1, const HiddenSeq& p2,
                       const ReformParams& params, const AttnOpts& opts = {});

/// attend(m, m) with its own parameters plus a residual connection.
HiddenSeq self_att(Tape& tape, const HiddenSeq& m, const AttentionParams& params,
                   const AttnOpts& opts = {});

struct SpanScores {
    Var start_logits;  // 1 x P2
    Var end_logits;    // 1 x P2
    std::vector<int> mask;
};

SpanScores span_head(Tape& tape, const HiddenSeq& m, const SpanHeadParams& params);

/// Highest-scoring (start, end) with start <= end <= start + max_len - 1 over
/// unmasked positions; ties prefer the smaller start, then the smaller end.
/// Throws when every position is masked.
std::pair<int, int> decode_span(const Matrix& start_logits, const Matrix& end_logits,
                                const std::vector<int>& mask, int max_len);

/// Constant 1 x T row of 0 / -kMaskPenalty used to exclude masked logits.
Matrix mask_penalty_row(const std::vector<int>& mask);

}  // namespace chainlab::nn
