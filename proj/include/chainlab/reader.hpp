#pragma once

// The three span-extraction reader variants and their training loop.

#include "chainlab/chain.hpp"
#include "chainlab/corpus.hpp"
#include "chainlab/neural.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace chainlab::reader {

enum class Variant { baseline, reform, comatch };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ReaderConfig {
    Variant variant = Variant::comatch;
    int hidden = 32;  // l; even (BiLSTM halves)
    int embed = 32;   // d
    double lr = 1e-3;
    int epochs = 5;
    int batch = 16;
    std::uint64_t seed = 1;
    int max_answer_len = 8;
    double attn_dropout = 0.0;
    // Optional early stop once dev exact match reaches this value.
    std::optional<double> stop_at_dev_em;

    void validate() const;
};

struct TrainReport {
    struct Epoch {
        int epoch = 0;  // 1-based
        double train_loss = 0.0;
        double dev_em = 0.0;
        double dev_f1 = 0.0;
        double seconds = 0.0;
    };
    std::vector<Epoch> epochs;
    int best_epoch = 0;  // 1-based; 0 when no epoch ran
    bool diverged = false;
    std::string divergence_message;
};

class Model {
public:
    Model(ReaderConfig config, corpus::Vocabulary vocab);

    const ReaderConfig& config() const { return config_; }
    const corpus::Vocabulary& vocab() const { return vocab_; }
    ad::ParamStore& params() { return store_; }
    const ad::ParamStore& params() const { return store_; }

    /// Span scores over p2 for the configured variant. Throws on empty p2.
    nn::SpanScores forward(nn::Tape& tape, const chains::ReaderInput& input, bool training,
                           std::uint64_t dropout_seed = 0);

    /// Cross-entropy of the gold start and end under the score softmaxes.
    nn::Var loss(const nn::SpanScores& scores, std::pair<int, int> gold) const;

    std::string predict(const chains::ReaderInput& input);

    TrainReport train(const std::vector<chains::ReaderInput>& train_set,
                      const std::vector<chains::ReaderInput>& dev_set);

    void save(const std::string& dir) const;
    static Model load(const std::string& dir);

    // Typed views into the store (used by tests to probe sharing/shape).
    const nn::EncoderParams& encoder() const { return enc_; }
    const nn::CoMatchParams& comatch() const { return comatch_; }
    const nn::ReformParams& reform() const { return reform_; }
    const nn::SpanHeadParams& span_head() const { return span_; }

private:
    void create_params_();
    void wire_();

    ReaderConfig config_;
    corpus::Vocabulary vocab_;
    ad::ParamStore store_;

    nn::EncoderParams enc_;
    nn::AttentionParams base_att_, base_self_;
    nn::CoMatchParams comatch_;
    nn::ReformParams reform_;
    nn::SpanHeadParams span_;
};

std::string config_to_json(const ReaderConfig& c);
ReaderConfig config_from_json(const std::string& text);
std::string report_to_json(const TrainReport& r);

}  // namespace chainlab::reader
