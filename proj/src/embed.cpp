#include "mfal/embed.hpp"

#include "mfal/seed.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <random>
#include <unistd.h>

namespace mfal {

using nlohmann::json;

std::vector<Embedding> Encoder::encode_batch(std::span<const Sample* const> samples) const {
    std::vector<Embedding> out;
    out.reserve(samples.size());
    for (const Sample* s : samples) out.push_back(encode(s->text()));
    return out;
}

// ---------------------------------------------------------------------------
// HashingEncoder

Eigen::Index HashingEncoder::bucket(std::string_view token) const {
    return static_cast<Eigen::Index>(splitmix64(fnv1a(token)) % static_cast<std::uint64_t>(dim_));
}

Embedding HashingEncoder::encode(std::string_view text) const {
    Embedding v = Embedding::Zero(dim_);
    std::string token;
    bool any = false;
    auto flush = [&] {
        if (token.empty()) return;
        v[bucket(token)] += 1.0;
        any = true;
        token.clear();
    };
    for (char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc) || c == '_')
            token += static_cast<char>(std::tolower(uc));
        else
            flush();
    }
    flush();
    if (!any) v[bucket("")] = 1.0;
    v.normalize();
    return v;
}

std::string HashingEncoder::token_for_bucket(Eigen::Index target, std::string_view prefix) const {
    if (target < 0 || target >= dim_) throw Error("bucket out of range");
    for (std::uint64_t n = 0;; ++n) {
        std::string candidate = std::string(prefix) + std::to_string(n);
        if (bucket(candidate) == target) return candidate;
    }
}

// ---------------------------------------------------------------------------
// ExternalEncoder

ExternalEncoder::ExternalEncoder(std::string name, std::string command, Eigen::Index dim,
                                 std::optional<std::filesystem::path> cache)
    : name_(std::move(name)), command_(std::move(command)), dim_(dim), cache_path_(std::move(cache)) {
    if (dim_ < 1) throw Error("encoder dimension must be positive");
    load_cache();
}

void ExternalEncoder::load_cache() {
    if (!cache_path_ || !std::filesystem::exists(*cache_path_)) return;
    std::ifstream in(*cache_path_);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || rec.value("encoder", "") != name_) continue;
        auto values = rec["vector"].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(values.size()) != dim_) continue;
        cache_[rec["id"].get<std::string>()] = Eigen::Map<const Embedding>(values.data(), dim_);
    }
}

void ExternalEncoder::append_cache(const std::string& id, const Embedding& v) const {
    if (!cache_path_) return;
    std::ofstream out(*cache_path_, std::ios::app);
    json rec = {{"encoder", name_}, {"id", id}, {"vector", std::vector<double>(v.data(), v.data() + v.size())}};
    out << rec.dump() << '\n';
}

Embedding ExternalEncoder::encode(std::string_view text) const {
    Sample probe("__probe__", std::string(text));
    const Sample* ptr = &probe;
    auto cached = cache_.find(probe.id());
    if (cached != cache_.end()) cache_.erase(cached);
    return encode_batch(std::span<const Sample* const>(&ptr, 1)).front();
}

std::vector<Embedding> ExternalEncoder::encode_batch(std::span<const Sample* const> samples) const {
    std::vector<const Sample*> missing;
    for (const Sample* s : samples)
        if (!cache_.contains(s->id())) missing.push_back(s);

    if (!missing.empty()) {
        static std::atomic<int> counter{0};
        const auto dir = std::filesystem::temp_directory_path();
        const auto stem = "mfal-enc-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
        const auto req_path = dir / (stem + ".in");
        const auto resp_path = dir / (stem + ".out");
        {
            std::ofstream req(req_path);
            for (const Sample* s : missing) req << json{{"id", s->id()}, {"text", s->text()}}.dump() << '\n';
        }
        const std::string cmd = command_ + " < '" + req_path.string() + "' > '" + resp_path.string() + "'";
        ++invocations_;
        const int rc = std::system(cmd.c_str());
        std::filesystem::remove(req_path);
        if (rc != 0) {
            std::filesystem::remove(resp_path);
            throw Error("external encoder '" + name_ + "' exited with status " + std::to_string(rc));
        }
        std::ifstream resp(resp_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(resp, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto rec = json::parse(line, nullptr, false);
            if (rec.is_discarded() || !rec.contains("id") || !rec.contains("vector"))
                throw Error("external encoder response line " + std::to_string(line_no) + " is malformed");
            auto values = rec["vector"].get<std::vector<double>>();
            if (static_cast<Eigen::Index>(values.size()) != dim_)
                throw Error("external encoder returned dimension " + std::to_string(values.size()) +
                            ", expected " + std::to_string(dim_));
            Embedding v = Eigen::Map<const Embedding>(values.data(), dim_);
            if (!v.allFinite()) throw Error("external encoder returned a non-finite vector");
            const auto id = rec["id"].get<std::string>();
            if (id != "__probe__") append_cache(id, v);
            cache_[id] = std::move(v);
        }
        std::filesystem::remove(resp_path);
    }

    std::vector<Embedding> out;
    out.reserve(samples.size());
    for (const Sample* s : samples) {
        auto it = cache_.find(s->id());
        if (it == cache_.end()) throw Error("external encoder returned no vector for '" + s->id() + "'");
        out.push_back(it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// EmbeddingStore

void EmbeddingStore::put(const std::string& id, Embedding v) {
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_)
        throw Error("embedding for '" + id + "' has dimension " + std::to_string(v.size()) + ", store expects " +
                    std::to_string(dim_));
    if (!v.allFinite()) throw Error("embedding for '" + id + "' has non-finite entries");
    vectors_[id] = std::move(v);
}

const Embedding& EmbeddingStore::at(std::string_view id) const {
    auto it = vectors_.find(std::string(id));
    if (it == vectors_.end()) throw Error("sample '" + std::string(id) + "' has no embedding");
    return it->second;
}

void EmbeddingStore::encode_missing(const Encoder& encoder, std::span<const Sample* const> samples) {
    std::vector<const Sample*> todo;
    for (const Sample* s : samples)
        if (!contains(s->id())) todo.push_back(s);
    if (todo.empty()) return;
    auto vecs = encoder.encode_batch(todo);
    for (std::size_t i = 0; i < todo.size(); ++i) put(todo[i]->id(), std::move(vecs[i]));
}

MatrixXd EmbeddingStore::gather(std::span<const std::string> ids) const {
    MatrixXd out(static_cast<Eigen::Index>(ids.size()), dim_);
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = at(ids[i]).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Retrieval

namespace {

bool ranks_before(const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
}

} // namespace

std::vector<Neighbor> knn(const Embedding& query, const EmbeddingStore& store,
                          std::span<const std::string> candidates, std::size_t k) {
    if (k < 1) throw Error("knn needs k >= 1");
    if (candidates.empty()) throw Error("knn over an empty candidate set");
    std::vector<Neighbor> all;
    all.reserve(candidates.size());
    for (const auto& id : candidates) all.push_back({id, cosine_similarity(query, store.at(id))});
    const auto take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), ranks_before);
    all.resize(take);
    return all;
}

std::optional<std::vector<PromptExample>> retrieve_prompt_examples(
    const Sample& query, const DataPool& pool, const AnnotatedSet& annotated,
    const EmbeddingStore& store, std::size_t neighbors, std::size_t shots) {
    const auto& human = annotated.human_ids();
    if (human.empty()) return std::nullopt;
    if (neighbors < 1 || shots < 1) throw Error("retrieval needs neighbors >= 1 and shots >= 1");

    const std::vector<std::string> ids(human.begin(), human.end());
    auto near = knn(store.at(query.id()), store, ids, neighbors);
    if (near.size() > shots) near.resize(shots);

    std::vector<PromptExample> out;
    out.reserve(near.size());
    for (auto& n : near) out.push_back({&pool.at(n.id), annotated.at(n.id).label, n.similarity});
    return out;
}

RetrievalMode retrieval_mode_from_string(std::string_view s) {
    if (s == "similar" || s == "Similar") return RetrievalMode::Similar;
    if (s == "random" || s == "Random") return RetrievalMode::Random;
    throw Error("unknown retrieval mode '" + std::string(s) + "' (expected similar or random)");
}

std::string_view to_string(RetrievalMode m) { return m == RetrievalMode::Similar ? "similar" : "random"; }

std::optional<std::vector<PromptExample>> PromptRetriever::retrieve(const Sample& query) const {
    if (mode_ == RetrievalMode::Similar)
        return retrieve_prompt_examples(query, *pool_, *annotated_, *store_, neighbors_, shots_);

    const auto& human = annotated_->human_ids();
    if (human.empty()) return std::nullopt;
    std::vector<std::string> ids(human.begin(), human.end());
    std::mt19937_64 rng(sample_seed(seed_, query.id()));
    std::shuffle(ids.begin(), ids.end(), rng);
    if (ids.size() > shots_) ids.resize(shots_);
    auto ranked = knn(store_->at(query.id()), *store_, ids, ids.size());
    std::vector<PromptExample> out;
    for (auto& n : ranked) out.push_back({&pool_->at(n.id), annotated_->at(n.id).label, n.similarity});
    return out;
}

} // namespace mfal
