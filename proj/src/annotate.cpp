#include "mfal/annotate.hpp"

#include "mfal/gold.hpp"
#include "mfal/seed.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <random>
#include <thread>

namespace mfal {

using nlohmann::json;

namespace {

Annotation make_annotation(const Sample& s, Label label, Fidelity f, const std::string& source, int round) {
    return Annotation{s.id(), std::move(label), f, source, round, 0};
}

/// Gold with probability `accuracy`, otherwise a uniformly drawn wrong label.
Label noisy_label(const Label& gold, const LabelSet& labels, double accuracy, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < accuracy) return gold;
    if (labels.size() < 2) throw Error("a noisy annotator needs at least two labels");
    std::uniform_int_distribution<std::size_t> pick(0, labels.size() - 2);
    std::size_t k = pick(rng);
    const auto gold_idx = *labels.index_of(gold);
    if (k >= gold_idx) ++k;
    return labels[k];
}

const LabelSet& require_labels(const AnnotationContext& context) {
    if (!context.labels) throw Error("annotation context carries no label set");
    return *context.labels;
}

} // namespace

AnnotationResult OracleAnnotator::annotate_batch(std::span<const Sample* const> samples,
                                                 const AnnotationContext& context) {
    AnnotationResult out;
    for (const Sample* s : samples) {
        const auto& gold = GoldGate::read(*s);
        if (!gold) {
            out.failures.push_back({s->id(), "sample '" + s->id() + "' has no gold label"});
            continue;
        }
        if (context.labels && !context.labels->contains(*gold)) {
            out.failures.push_back({s->id(), "gold label '" + *gold + "' is outside the label set"});
            continue;
        }
        out.annotations.push_back(make_annotation(*s, *gold, Fidelity::High, name_, context.round));
    }
    return out;
}

NoisyAnnotator::NoisyAnnotator(NoisyProfile profile, std::string name) : profile_(profile), name_(std::move(name)) {
    if (profile_.accuracy < 0.0 || profile_.accuracy > 1.0) throw Error("noisy accuracy must lie in [0, 1]");
}

AnnotationResult NoisyAnnotator::annotate_batch(std::span<const Sample* const> samples,
                                                const AnnotationContext& context) {
    const auto& labels = require_labels(context);
    if (profile_.accuracy < 1.0 && labels.size() < 2) throw Error("a noisy annotator needs at least two labels");
    AnnotationResult out;
    for (const Sample* s : samples) {
        const auto& gold = GoldGate::read(*s);
        if (!gold || !labels.contains(*gold)) {
            out.failures.push_back({s->id(), "sample '" + s->id() + "' has no usable gold label"});
            continue;
        }
        auto label = noisy_label(*gold, labels, profile_.accuracy, sample_seed(profile_.seed, s->id()));
        out.annotations.push_back(make_annotation(*s, std::move(label), Fidelity::Low, name_, context.round));
    }
    return out;
}

ContextSensitiveAnnotator::ContextSensitiveAnnotator(double floor, double ceiling, std::uint64_t seed, std::string name)
    : floor_(floor), ceiling_(ceiling), seed_(seed), name_(std::move(name)) {
    if (floor < 0.0 || ceiling > 1.0 || floor > ceiling) throw Error("need 0 <= floor <= ceiling <= 1");
}

double ContextSensitiveAnnotator::accuracy_for(double floor, double ceiling,
                                               const std::optional<std::vector<PromptExample>>& context) {
    if (!context || context->empty()) return floor;
    double mean = 0.0;
    for (const auto& ex : *context) mean += ex.similarity;
    mean = std::clamp(mean / static_cast<double>(context->size()), 0.0, 1.0);
    return floor + (ceiling - floor) * mean;
}

AnnotationResult ContextSensitiveAnnotator::annotate_batch(std::span<const Sample* const> samples,
                                                           const AnnotationContext& context) {
    const auto& labels = require_labels(context);
    AnnotationResult out;
    for (const Sample* s : samples) {
        const auto& gold = GoldGate::read(*s);
        if (!gold || !labels.contains(*gold)) {
            out.failures.push_back({s->id(), "sample '" + s->id() + "' has no usable gold label"});
            continue;
        }
        std::optional<std::vector<PromptExample>> examples;
        if (context.retriever) examples = context.retriever->retrieve(*s);
        const double p = accuracy_for(floor_, ceiling_, examples);
        auto label = noisy_label(*gold, labels, p, sample_seed(seed_, s->id()));
        out.annotations.push_back(make_annotation(*s, std::move(label), Fidelity::Low, name_, context.round));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prompts

namespace {

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

} // namespace

void PromptTemplate::validate(const LabelSet& labels) const {
    if (example_format.find("{text}") == std::string::npos || example_format.find("{label}") == std::string::npos)
        throw Error("prompt template example_format needs {text} and {label} slots");
    if (query_format.find("{text}") == std::string::npos)
        throw Error("prompt template query_format needs a {text} slot");
    for (const auto& l : labels)
        if (std::ranges::find(label_parse, l) == label_parse.end())
            throw Error("prompt template label_parse does not cover label '" + l + "'");
}

PromptTemplate PromptTemplate::defaults(const LabelSet& labels) {
    PromptTemplate t;
    t.instruction = "Classify the text into exactly one of the following labels: ";
    for (std::size_t i = 0; i < labels.size(); ++i) t.instruction += (i ? ", " : "") + labels[i];
    t.instruction += ". Answer with the label only.";
    t.example_format = "Text: {text}\nLabel: {label}";
    t.query_format = "Text: {text}\nLabel:";
    t.label_parse = labels.labels();
    return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open prompt template '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error("prompt template '" + path.string() + "': " + e.what());
    }
    PromptTemplate t;
    t.instruction = j.value("instruction", "");
    t.example_format = j.value("example_format", "");
    t.query_format = j.value("query_format", "");
    t.label_parse = j.value("label_parse", std::vector<std::string>{});
    return t;
}

std::string build_prompt(const Sample& query, std::span<const PromptExample> examples, const PromptTemplate& tmpl) {
    std::string out = tmpl.instruction;
    for (const auto& ex : examples) {
        out += "\n\n";
        out += replace_all(replace_all(tmpl.example_format, "{text}", ex.sample->text()), "{label}", ex.label);
    }
    out += "\n\n";
    out += replace_all(tmpl.query_format, "{text}", query.text());
    return out;
}

std::optional<Label> parse_label(std::string_view response, std::span<const Label> labels) {
    const std::string text = lower(response);
    std::vector<std::string> lowered;
    lowered.reserve(labels.size());
    for (const auto& l : labels) lowered.push_back(lower(l));

    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        if (pos > 0 && is_word(text[pos - 1]) && is_word(text[pos])) continue;
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < lowered.size(); ++i) {
            const auto& l = lowered[i];
            if (l.empty() || text.compare(pos, l.size(), l) != 0) continue;
            const std::size_t end = pos + l.size();
            if (end < text.size() && is_word(text[end]) && is_word(l.back())) continue;
            if (!best || l.size() > lowered[*best].size()) best = i;
        }
        if (best) return labels[*best];
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Completion client

HttpCompletionClient::HttpCompletionClient(CompletionEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    const auto& url = endpoint_.base_url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error("llm.base_url must include a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string HttpCompletionClient::complete(const std::string& prompt) {
    httplib::Client cli(scheme_host_port_);
    const auto timeout = std::chrono::milliseconds(endpoint_.timeout_ms);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                               static_cast<long>((timeout % std::chrono::seconds(1)).count() * 1000));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                         static_cast<long>((timeout % std::chrono::seconds(1)).count() * 1000));
    json body = {{"model", endpoint_.model},
                 {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                 {"temperature", 0}};
    auto res = cli.Post(path_prefix_ + "/chat/completions", body.dump(), "application/json");
    if (!res) throw TransportError("completion request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransportError("completion endpoint returned HTTP " + std::to_string(res->status));
    auto reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) throw TransportError("completion endpoint returned malformed JSON");
    try {
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw TransportError("completion response lacks choices[0].message.content");
    }
}

// ---------------------------------------------------------------------------
// LLM annotator

LlmAnnotator::LlmAnnotator(std::shared_ptr<CompletionClient> client, PromptTemplate tmpl, LlmOptions options,
                           std::string name)
    : client_(std::move(client)), template_(std::move(tmpl)), options_(options), name_(std::move(name)) {
    if (!client_) throw Error("llm annotator needs a completion client");
    if (options_.retries < 0 || options_.max_inflight < 1) throw Error("invalid llm retry/concurrency settings");
}

AnnotationResult LlmAnnotator::annotate_batch(std::span<const Sample* const> samples,
                                              const AnnotationContext& context) {
    const auto& labels = require_labels(context);
    template_.validate(labels);

    struct Outcome {
        std::optional<Label> label;
        std::string reason;
    };

    auto annotate_one = [&](const Sample& s) -> Outcome {
        std::vector<PromptExample> examples;
        if (context.retriever)
            if (auto got = context.retriever->retrieve(s)) examples = std::move(*got);
        const auto prompt = build_prompt(s, examples, template_);
        std::string reason;
        auto delay = options_.backoff;
        for (int attempt = 0; attempt <= options_.retries; ++attempt) {
            if (attempt > 0 && delay.count() > 0) {
                std::this_thread::sleep_for(delay);
                delay *= 2;
            }
            try {
                const auto response = client_->complete(prompt);
                if (auto label = parse_label(response, template_.label_parse); label && labels.contains(*label))
                    return {std::move(label), {}};
                reason = "unparseable response";
            } catch (const TransportError& e) {
                reason = e.what();
            }
        }
        return {std::nullopt, reason + " after " + std::to_string(options_.retries + 1) + " attempts"};
    };

    std::vector<Outcome> outcomes(samples.size());
    const auto width = static_cast<std::size_t>(options_.max_inflight);
    for (std::size_t start = 0; start < samples.size(); start += width) {
        const auto stop = std::min(samples.size(), start + width);
        if (stop - start == 1) {
            outcomes[start] = annotate_one(*samples[start]);
            continue;
        }
        std::vector<std::future<Outcome>> inflight;
        for (std::size_t i = start; i < stop; ++i)
            inflight.push_back(std::async(std::launch::async, annotate_one, std::cref(*samples[i])));
        for (std::size_t i = start; i < stop; ++i) outcomes[i] = inflight[i - start].get();
    }

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return samples[a]->id() < samples[b]->id(); });

    AnnotationResult out;
    for (std::size_t i : order) {
        if (outcomes[i].label)
            out.annotations.push_back(
                make_annotation(*samples[i], *outcomes[i].label, Fidelity::Low, name_, context.round));
        else
            out.failures.push_back({samples[i]->id(), outcomes[i].reason});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Human queue

HumanQueueAnnotator::HumanQueueAnnotator(std::shared_ptr<HumanQueue> queue, std::chrono::milliseconds timeout,
                                         std::string name)
    : queue_(std::move(queue)), timeout_(timeout), name_(std::move(name)) {
    if (!queue_) throw Error("human-queue annotator needs a queue");
}

AnnotationResult HumanQueueAnnotator::annotate_batch(std::span<const Sample* const> samples,
                                                     const AnnotationContext& context) {
    std::vector<QueueItem> items;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = *samples[i];
        QueueItem item;
        item.sample_id = s.id();
        item.text = s.text();
        item.uncertainty = i < context.uncertainty.size() ? context.uncertainty[i] : 0.0;
        item.round = context.round;
        if (context.retriever)
            if (auto examples = context.retriever->retrieve(s))
                for (const auto& ex : *examples) item.retrieved_context.push_back({ex.sample->text(), ex.label});
        ids.push_back(s.id());
        items.push_back(std::move(item));
    }
    queue_->enqueue(std::move(items));
    const auto labeled = queue_->wait_labeled(ids, timeout_);

    AnnotationResult out;
    std::map<std::string, const QueueItem*> by_id;
    for (const auto& item : labeled) by_id[item.sample_id] = &item;
    for (const Sample* s : samples) {
        auto it = by_id.find(s->id());
        if (it == by_id.end()) {
            out.pending.push_back(s->id());
            continue;
        }
        const auto& item = *it->second;
        out.annotations.push_back(make_annotation(*s, *item.label, Fidelity::High,
                                                  item.annotator.empty() ? name_ : item.annotator, context.round));
    }
    return out;
}

} // namespace mfal
