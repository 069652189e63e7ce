#pragma once

#include "mfal/core.hpp"
#include "mfal/embed.hpp"
#include "mfal/human_queue.hpp"

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mfal {

struct AnnotationFailure {
    std::string sample_id;
    std::string reason;
};

/// Exactly one entry per requested sample across the three lists.
struct AnnotationResult {
    std::vector<Annotation> annotations;
    std::vector<AnnotationFailure> failures;
    std::vector<std::string> pending; // timed out, still waiting on a human
};

/// What an annotator may see besides the samples themselves.
struct AnnotationContext {
    int round = 0;
    const LabelSet* labels = nullptr;
    const PromptRetriever* retriever = nullptr;  // low-fidelity in-context examples
    std::span<const double> uncertainty;          // parallel to the samples, may be empty
};

class Annotator {
public:
    virtual ~Annotator() = default;
    virtual std::string name() const = 0;
    virtual Fidelity fidelity() const = 0;
    virtual AnnotationResult annotate_batch(std::span<const Sample* const> samples, const AnnotationContext& context) = 0;
};

/// Simulated human: returns the withheld gold label.
class OracleAnnotator final : public Annotator {
public:
    explicit OracleAnnotator(std::string name = "oracle") : name_(std::move(name)) {}
    std::string name() const override { return name_; }
    Fidelity fidelity() const override { return Fidelity::High; }
    AnnotationResult annotate_batch(std::span<const Sample* const> samples, const AnnotationContext& context) override;

private:
    std::string name_;
};

struct NoisyProfile {
    double accuracy = 1.0;
    std::uint64_t seed = 0;
};

/// Simulated low-fidelity annotator: gold with probability p, otherwise a uniformly
/// drawn wrong label. Draws are seeded per (seed, sample id).
class NoisyAnnotator final : public Annotator {
public:
    NoisyAnnotator(NoisyProfile profile, std::string name = "noisy");
    std::string name() const override { return name_; }
    Fidelity fidelity() const override { return Fidelity::Low; }
    AnnotationResult annotate_batch(std::span<const Sample* const> samples, const AnnotationContext& context) override;

private:
    NoisyProfile profile_;
    std::string name_;
};

/// Simulated in-context annotator whose accuracy grows with the similarity of the
/// retrieved examples: p = floor + (ceiling - floor) * clamp(mean similarity, 0, 1).
/// Without context it answers at `floor`.
class ContextSensitiveAnnotator final : public Annotator {
public:
    ContextSensitiveAnnotator(double floor, double ceiling, std::uint64_t seed, std::string name = "context-sim");
    std::string name() const override { return name_; }
    Fidelity fidelity() const override { return Fidelity::Low; }
    AnnotationResult annotate_batch(std::span<const Sample* const> samples, const AnnotationContext& context) override;

    static double accuracy_for(double floor, double ceiling, const std::optional<std::vector<PromptExample>>& context);

private:
    double floor_;
    double ceiling_;
    std::uint64_t seed_;
    std::string name_;
};

// ---------------------------------------------------------------------------
// Prompted LLM annotation

struct PromptTemplate {
    std::string instruction;
    std::string example_format; // {text} and {label}
    std::string query_format;   // {text}
    std::vector<Label> label_parse;

    /// Throws when a slot is missing or label_parse does not cover `labels`.
    void validate(const LabelSet& labels) const;

    static PromptTemplate defaults(const LabelSet& labels);
    /// JSON object with the four fields above.
    static PromptTemplate load(const std::filesystem::path& path);
};

/// Instruction, then examples in the given order, then the query; blocks separated by a blank line.
std::string build_prompt(const Sample& query, std::span<const PromptExample> examples, const PromptTemplate& tmpl);

/// First label occurring in `response` as a whole token sequence, case-insensitive.
/// Among labels starting at the same position the longest wins.
std::optional<Label> parse_label(std::string_view response, std::span<const Label> labels);

class TransportError : public Error {
public:
    using Error::Error;
};

/// A single deterministic completion call. Implementations throw TransportError.
class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

struct CompletionEndpoint {
    std::string base_url;   // e.g. http://127.0.0.1:8080/v1
    std::string model;
    int timeout_ms = 30000;
};

/// POSTs {model, messages:[{role:user, content}], temperature:0} to <base_url>/chat/completions
/// and returns choices[0].message.content.
class HttpCompletionClient final : public CompletionClient {
public:
    explicit HttpCompletionClient(CompletionEndpoint endpoint);
    std::string complete(const std::string& prompt) override;

private:
    CompletionEndpoint endpoint_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

struct LlmOptions {
    int retries = 3;
    int max_inflight = 4;
    std::chrono::milliseconds backoff{200}; // doubles after each failed attempt
};

/// Retrieval-built prompt per sample, one completion call, label parse. Failures after
/// `retries` extra attempts are reported per sample, never replaced by a default label.
class LlmAnnotator final : public Annotator {
public:
    LlmAnnotator(std::shared_ptr<CompletionClient> client, PromptTemplate tmpl, LlmOptions options = {},
                 std::string name = "llm");
    std::string name() const override { return name_; }
    Fidelity fidelity() const override { return Fidelity::Low; }
    AnnotationResult annotate_batch(std::span<const Sample* const> samples, const AnnotationContext& context) override;

private:
    std::shared_ptr<CompletionClient> client_;
    PromptTemplate template_;
    LlmOptions options_;
    std::string name_;
};

/// Live human annotation through a HumanQueue (served over HTTP by the service).
class HumanQueueAnnotator final : public Annotator {
public:
    HumanQueueAnnotator(std::shared_ptr<HumanQueue> queue, std::chrono::milliseconds timeout,
                        std::string name = "human");
    std::string name() const override { return name_; }
    Fidelity fidelity() const override { return Fidelity::High; }
    AnnotationResult annotate_batch(std::span<const Sample* const> samples, const AnnotationContext& context) override;

    const std::shared_ptr<HumanQueue>& queue() const { return queue_; }

private:
    std::shared_ptr<HumanQueue> queue_;
    std::chrono::milliseconds timeout_;
    std::string name_;
};

} // namespace mfal
