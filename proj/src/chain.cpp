#include "chainlab/chain.hpp"

#include "chainlab/eval.hpp"
#include "chainlab/tensor.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace chainlab::chains {

using nlohmann::json;

std::string to_string(DiscardReason r) {
    switch (r) {
        case DiscardReason::ambiguous: return "ambiguous";
        case DiscardReason::answer_not_found: return "answer_not_found";
        case DiscardReason::comparison: return "comparison";
    }
    return "?";
}

std::optional<std::pair<int, int>> find_normalized_phrase(
    const std::vector<std::string>& tokens, const std::string& phrase) {
    std::vector<std::string> target;
    {
        std::istringstream is(eval::normalize_answer(phrase));
        std::string w;
        while (is >> w) target.push_back(w);
    }
    if (target.empty()) return std::nullopt;

    std::vector<std::string> norm(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) norm[i] = eval::normalize_answer(tokens[i]);

    // Positions of tokens that survive normalization.
    std::vector<std::size_t> solid;
    for (std::size_t i = 0; i < norm.size(); ++i)
        if (!norm[i].empty()) solid.push_back(i);

    if (solid.size() < target.size()) return std::nullopt;
    for (std::size_t s = 0; s + target.size() <= solid.size(); ++s) {
        bool ok = true;
        for (std::size_t k = 0; k < target.size(); ++k) {
            if (norm[solid[s + k]] != target[k]) {
                ok = false;
                break;
            }
        }
        if (ok)
            return std::make_pair(static_cast<int>(solid[s]),
                                  static_cast<int>(solid[s + target.size() - 1]));
    }
    return std::nullopt;
}

bool contains_normalized_phrase(const std::vector<std::string>& tokens,
                                const std::string& phrase) {
    return find_normalized_phrase(tokens, phrase).has_value();
}

ExtractResult extract_chain(const corpus::QAExample& example) {
    if (example.supporting.size() != 2)
        throw std::invalid_argument("extract_chain: example " + example.id +
                                    " must have exactly 2 supporting passages");
    if (example.qtype == corpus::QType::comparison) return Discard{DiscardReason::comparison};

    const corpus::Passage& p0 = example.supporting[0];
    const corpus::Passage& p1 = example.supporting[1];
    const bool in0 = contains_normalized_phrase(p0.tokens, example.answer);
    const bool in1 = contains_normalized_phrase(p1.tokens, example.answer);

    if (!in0 && !in1) return Discard{DiscardReason::answer_not_found};
    if (in0 != in1) {
        const corpus::Passage& ans = in0 ? p0 : p1;
        const corpus::Passage& ctx = in0 ? p1 : p0;
        return ReasoningChain{ctx, ans};
    }

    // Both contain the answer: a title appearing in the other passage marks
    // its own passage as the final link.
    const bool title0_in_p1 = contains_normalized_phrase(p1.tokens, p0.title);
    const bool title1_in_p0 = contains_normalized_phrase(p0.tokens, p1.title);
    if (title0_in_p1 == title1_in_p0) return Discard{DiscardReason::ambiguous};
    if (title1_in_p0) return ReasoningChain{p0, p1};
    return ReasoningChain{p1, p0};
}

// ---- settings -----------------------------------------------------------

std::string to_string(SettingKind k) {
    switch (k) {
        case SettingKind::single_oracle: return "single";
        case SettingKind::ordered_oracle: return "ordered";
        case SettingKind::random_order: return "random";
    }
    return "?";
}

SettingKind setting_from_string(const std::string& s) {
    if (s == "single") return SettingKind::single_oracle;
    if (s == "ordered") return SettingKind::ordered_oracle;
    if (s == "random") return SettingKind::random_order;
    throw std::invalid_argument("unknown setting: " + s);
}

namespace {

bool random_swap(std::uint64_t seed, const std::string& id) {
    std::uint64_t state = seed ^ ad::fnv1a64(id);
    return (ad::splitmix64(state) & 1) != 0;
}

}  // namespace

ReaderInput make_reader_input(const corpus::QAExample& example, const ReasoningChain& chain,
                              const OracleSetting& setting, bool comatch_mode) {
    ReaderInput in;
    in.id = example.id;
    in.question_tokens = example.question_tokens;
    in.answer = example.answer;

    switch (setting.kind) {
        case SettingKind::ordered_oracle:
            in.p1_tokens = chain.context_passage.tokens;
            in.p2_tokens = chain.answer_passage.tokens;
            break;
        case SettingKind::single_oracle:
            in.p2_tokens = chain.answer_passage.tokens;
            if (comatch_mode) in.p1_tokens = chain.answer_passage.tokens;
            break;
        case SettingKind::random_order:
            if (random_swap(setting.seed, example.id)) {
                in.p1_tokens = chain.answer_passage.tokens;
                in.p2_tokens = chain.context_passage.tokens;
            } else {
                in.p1_tokens = chain.context_passage.tokens;
                in.p2_tokens = chain.answer_passage.tokens;
            }
            break;
    }
    in.gold_span = find_normalized_phrase(in.p2_tokens, in.answer);
    return in;
}

SettingsDataset build_settings_dataset(const std::vector<corpus::QAExample>& examples,
                                       const OracleSetting& setting, bool comatch_mode) {
    SettingsDataset out;
    for (const auto& ex : examples) {
        ++out.report.processed;
        ExtractResult res = extract_chain(ex);
        if (std::holds_alternative<Discard>(res)) {
            ++out.report.discards[to_string(std::get<Discard>(res).reason)];
            continue;
        }
        out.inputs.push_back(
            make_reader_input(ex, std::get<ReasoningChain>(res), setting, comatch_mode));
        ++out.report.emitted;
    }
    return out;
}

// ---- file formats ---------------------------------------------------------

void save_chains(const std::vector<ChainRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& r : records) {
        json rec = {{"id", r.id},
                    {"question", r.question},
                    {"answer", r.answer},
                    {"context_title", r.chain.context_passage.title},
                    {"answer_title", r.chain.answer_passage.title},
                    {"context_text", r.chain.context_passage.text},
                    {"answer_text", r.chain.answer_passage.text}};
        out << rec.dump() << "\n";
    }
}

std::vector<ChainRecord> load_chains(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<ChainRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ChainRecord r;
        r.id = rec.at("id").get<std::string>();
        r.question = rec.at("question").get<std::string>();
        r.answer = rec.at("answer").get<std::string>();
        r.chain.context_passage =
            corpus::Passage(rec.at("context_title").get<std::string>(),
                            rec.at("context_text").get<std::string>());
        r.chain.answer_passage = corpus::Passage(rec.at("answer_title").get<std::string>(),
                                                 rec.at("answer_text").get<std::string>());
        out.push_back(std::move(r));
    }
    return out;
}

void save_reader_inputs(const std::vector<ReaderInput>& inputs, SettingKind setting,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& in : inputs) {
        json rec = {{"id", in.id},
                    {"question_tokens", in.question_tokens},
                    {"p1_tokens", in.p1_tokens},
                    {"p2_tokens", in.p2_tokens},
                    {"answer", in.answer},
                    {"gold_start", in.gold_span ? json(in.gold_span->first) : json(nullptr)},
                    {"gold_end", in.gold_span ? json(in.gold_span->second) : json(nullptr)},
                    {"setting", to_string(setting)}};
        out << rec.dump() << "\n";
    }
}

std::vector<ReaderInput> load_reader_inputs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<ReaderInput> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ReaderInput r;
        r.id = rec.at("id").get<std::string>();
        r.question_tokens = rec.at("question_tokens").get<std::vector<std::string>>();
        r.p1_tokens = rec.at("p1_tokens").get<std::vector<std::string>>();
        r.p2_tokens = rec.at("p2_tokens").get<std::vector<std::string>>();
        r.answer = rec.at("answer").get<std::string>();
        if (!rec.at("gold_start").is_null())
            r.gold_span = {rec.at("gold_start").get<int>(), rec.at("gold_end").get<int>()};
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace chainlab::chains
