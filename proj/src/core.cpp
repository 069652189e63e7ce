#include "mfal/core.hpp"

#include "mfal/gold.hpp"
#include "mfal/seed.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace mfal {

using nlohmann::json;

LabelSet::LabelSet(std::vector<Label> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw Error("label set must not be empty");
    std::set<Label> seen;
    for (const auto& l : labels_) {
        if (l.empty()) throw Error("labels must be non-empty strings");
        if (!seen.insert(l).second) throw Error("duplicate label '" + l + "' in label set");
    }
}

std::optional<std::size_t> LabelSet::index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] == label) return i;
    return std::nullopt;
}

std::string LabelSet::describe() const {
    std::string out = "{";
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (i) out += ',';
        out += labels_[i];
    }
    return out + "}";
}

std::string_view to_string(Fidelity f) { return f == Fidelity::High ? "High" : "Low"; }

Fidelity fidelity_from_string(std::string_view s) {
    if (s == "High" || s == "high") return Fidelity::High;
    if (s == "Low" || s == "low") return Fidelity::Low;
    throw Error("unknown fidelity '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// DataPool

void DataPool::add(Sample sample) {
    if (sample.id().empty()) throw Error("sample id must not be empty");
    if (samples_.contains(sample.id())) throw Error("duplicate sample id '" + sample.id() + "'");
    std::string id = sample.id();
    samples_.emplace(id, std::move(sample));
    order_.push_back(id);
    unannotated_.push_back(id);
    unannotated_set_.insert(std::move(id));
}

bool DataPool::contains(std::string_view id) const { return samples_.contains(std::string(id)); }

const Sample& DataPool::at(std::string_view id) const {
    if (const auto* s = find(id)) return *s;
    throw Error("unknown sample id '" + std::string(id) + "'");
}

const Sample* DataPool::find(std::string_view id) const {
    auto it = samples_.find(std::string(id));
    return it == samples_.end() ? nullptr : &it->second;
}

bool DataPool::is_unannotated(std::string_view id) const {
    return unannotated_set_.contains(std::string(id));
}

void DataPool::mark_annotated(std::span<const std::string> ids) {
    if (ids.empty()) return;
    std::unordered_set<std::string> drop(ids.begin(), ids.end());
    for (const auto& id : drop) unannotated_set_.erase(id);
    std::erase_if(unannotated_, [&](const std::string& id) { return drop.contains(id); });
}

std::uint64_t DataPool::fingerprint() const {
    std::uint64_t h = fnv1a("pool");
    for (const auto& id : order_) {
        h = fnv1a(id, h);
        h = fnv1a("\x1f", h);
        h = fnv1a(samples_.at(id).text(), h);
        h = fnv1a("\x1e", h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// AnnotatedSet

bool AnnotatedSet::contains(std::string_view id) const {
    return annotations_.contains(std::string(id));
}

const Annotation& AnnotatedSet::at(std::string_view id) const {
    auto it = annotations_.find(std::string(id));
    if (it == annotations_.end()) throw Error("sample '" + std::string(id) + "' is not annotated");
    return it->second;
}

std::vector<Annotation> AnnotatedSet::in_sequence_order() const {
    std::vector<Annotation> out;
    out.reserve(annotations_.size());
    for (const auto& [_, a] : annotations_) out.push_back(a);
    std::ranges::sort(out, {}, &Annotation::sequence);
    return out;
}

void commit_annotations(DataPool& pool, AnnotatedSet& set, std::vector<Annotation> batch) {
    std::unordered_set<std::string> in_batch;
    for (const auto& a : batch) {
        if (!pool.contains(a.sample_id))
            throw CommitError("unknown sample id '" + a.sample_id + "'", a.sample_id);
        if (set.contains(a.sample_id) || !pool.is_unannotated(a.sample_id))
            throw CommitError("sample '" + a.sample_id + "' is already annotated", a.sample_id);
        if (!in_batch.insert(a.sample_id).second)
            throw CommitError("sample '" + a.sample_id + "' appears twice in one batch", a.sample_id);
        if (!set.labels().empty() && !set.labels().contains(a.label))
            throw CommitError("label '" + a.label + "' for sample '" + a.sample_id + "' is not in " +
                                  set.labels().describe(),
                              a.sample_id);
        if (a.round < 0) throw CommitError("negative round for '" + a.sample_id + "'", a.sample_id);
    }

    std::vector<std::string> ids;
    ids.reserve(batch.size());
    for (auto& a : batch) {
        a.sequence = set.next_sequence_++;
        ids.push_back(a.sample_id);
        (a.fidelity == Fidelity::High ? set.human_ids_ : set.llm_ids_).insert(a.sample_id);
        set.annotations_.emplace(a.sample_id, std::move(a));
    }
    pool.mark_annotated(ids);
}

AnnotatedSet restore_annotated_set(LabelSet labels, std::vector<Annotation> annotations,
                                   std::uint64_t next_sequence) {
    AnnotatedSet set(std::move(labels));
    std::uint64_t max_seq = 0;
    std::set<std::uint64_t> seqs;
    for (auto& a : annotations) {
        if (!set.labels_.empty() && !set.labels_.contains(a.label))
            throw IntegrityError("annotation for '" + a.sample_id + "' has label outside the label set");
        if (!seqs.insert(a.sequence).second)
            throw IntegrityError("duplicate annotation sequence number " + std::to_string(a.sequence));
        max_seq = std::max(max_seq, a.sequence);
        (a.fidelity == Fidelity::High ? set.human_ids_ : set.llm_ids_).insert(a.sample_id);
        std::string id = a.sample_id;
        if (!set.annotations_.emplace(id, std::move(a)).second)
            throw IntegrityError("sample '" + id + "' annotated twice");
    }
    if (next_sequence <= max_seq)
        throw IntegrityError("next sequence number does not exceed recorded sequences");
    set.next_sequence_ = next_sequence;
    return set;
}

// ---------------------------------------------------------------------------
// Pool files

PoolFormat pool_format_from_string(std::string_view s) {
    if (s == "jsonl") return PoolFormat::Jsonl;
    if (s == "csv") return PoolFormat::Csv;
    throw Error("unknown pool format '" + std::string(s) + "' (expected jsonl or csv)");
}

PoolFormat pool_format_for(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? PoolFormat::Csv : PoolFormat::Jsonl;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw PoolFormatError("line " + std::to_string(line_no) + ": unterminated quote", line_no);
    fields.push_back(std::move(cur));
    return fields;
}

Sample parse_json_record(const std::string& line, std::size_t line_no) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::exception& e) {
        throw PoolFormatError("line " + std::to_string(line_no) + ": malformed record: " + e.what(), line_no);
    }
    auto bad = [&](const std::string& why) {
        return PoolFormatError("line " + std::to_string(line_no) + ": " + why, line_no);
    };
    if (!rec.is_object()) throw bad("record is not an object");
    if (!rec.contains("id") || !rec["id"].is_string()) throw bad("missing string field 'id'");
    if (!rec.contains("text") || !rec["text"].is_string()) throw bad("missing string field 'text'");
    std::optional<Label> gold;
    if (rec.contains("label") && !rec["label"].is_null()) {
        if (!rec["label"].is_string()) throw bad("field 'label' must be a string");
        gold = rec["label"].get<std::string>();
    }
    Sample::Metadata meta;
    if (rec.contains("meta")) {
        if (!rec["meta"].is_object()) throw bad("field 'meta' must be a flat string map");
        for (const auto& [k, v] : rec["meta"].items()) {
            if (!v.is_string()) throw bad("meta value for '" + k + "' must be a string");
            meta.emplace(k, v.get<std::string>());
        }
    }
    return Sample(rec["id"].get<std::string>(), rec["text"].get<std::string>(), std::move(gold),
                  std::move(meta));
}

} // namespace

std::vector<Sample> load_samples(const std::filesystem::path& path, PoolFormat format) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open pool file '" + path.string() + "'");

    std::vector<Sample> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    int id_col = -1, text_col = -1, label_col = -1;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        std::optional<Sample> sample;
        if (format == PoolFormat::Jsonl) {
            sample = parse_json_record(line, line_no);
        } else if (header.empty()) {
            header = split_csv_line(line, line_no);
            for (int i = 0; i < static_cast<int>(header.size()); ++i) {
                if (header[i] == "id") id_col = i;
                else if (header[i] == "text") text_col = i;
                else if (header[i] == "label") label_col = i;
            }
            if (id_col < 0 || text_col < 0)
                throw PoolFormatError("line " + std::to_string(line_no) + ": header must name id and text columns",
                                      line_no);
            continue;
        } else {
            auto fields = split_csv_line(line, line_no);
            if (fields.size() != header.size())
                throw PoolFormatError("line " + std::to_string(line_no) + ": expected " +
                                          std::to_string(header.size()) + " fields, got " +
                                          std::to_string(fields.size()),
                                      line_no);
            std::optional<Label> gold;
            if (label_col >= 0 && !fields[label_col].empty()) gold = fields[label_col];
            if (fields[id_col].empty())
                throw PoolFormatError("line " + std::to_string(line_no) + ": empty id", line_no);
            sample.emplace(fields[id_col], fields[text_col], std::move(gold));
        }

        if (!seen.insert(sample->id()).second)
            throw PoolFormatError("line " + std::to_string(line_no) + ": duplicate id '" + sample->id() + "'",
                                  line_no, sample->id());
        out.push_back(std::move(*sample));
    }
    return out;
}

DataPool load_pool(const std::filesystem::path& path, PoolFormat format) {
    DataPool pool;
    for (auto& s : load_samples(path, format)) pool.add(std::move(s));
    return pool;
}

void write_samples(const std::filesystem::path& path, std::span<const Sample> samples) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    for (const auto& s : samples) {
        json rec = {{"id", s.id()}, {"text", s.text()}};
        if (const auto& gold = GoldGate::read(s)) rec["label"] = *gold;
        if (!s.metadata().empty()) rec["meta"] = s.metadata();
        out << rec.dump() << '\n';
    }
}

LabelSet infer_label_set(std::span<const Sample* const> samples) {
    std::set<Label> labels;
    for (const Sample* s : samples)
        if (const auto& gold = GoldGate::read(*s)) labels.insert(*gold);
    return LabelSet({labels.begin(), labels.end()});
}

} // namespace mfal
