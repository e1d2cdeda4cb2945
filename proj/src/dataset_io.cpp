#include "sahp/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sahp/rng.hpp"

namespace sahp {

namespace {

using nlohmann::json;

json sequence_to_json(const Sequence& seq) {
    json events = json::array();
    for (const auto& ev : seq.events) {
        events.push_back({{"type", ev.type}, {"time", ev.time}});
    }
    return json{{"horizon", seq.horizon}, {"events", std::move(events)}};
}

// Canonical per-sequence line, independent of split labels. Also the byte
// string keyed by split_dataset's content shuffle.
std::string sequence_line(const Sequence& seq) { return sequence_to_json(seq).dump(); }

Sequence sequence_from_json(const json& j, std::size_t line_no) {
    if (!j.is_object()) throw DataError("line " + std::to_string(line_no) + ": expected a sequence object");
    Sequence seq;
    if (!j.contains("events") || !j.at("events").is_array()) {
        throw DataError("line " + std::to_string(line_no) + ": missing \"events\" array");
    }
    for (const auto& je : j.at("events")) {
        if (!je.is_object() || !je.contains("type") || !je.contains("time")) {
            throw DataError("line " + std::to_string(line_no) + ": event needs \"type\" and \"time\"");
        }
        seq.events.push_back(Event{je.at("type").get<int>(), je.at("time").get<double>()});
    }
    if (j.contains("horizon")) {
        seq.horizon = j.at("horizon").get<double>();
    } else {
        // Horizon defaults to the last event time; the likelihood integrates
        // over (0, T] so a defined T is mandatory.
        seq.horizon = seq.events.empty() ? 0.0 : seq.events.back().time;
    }
    return seq;
}

}  // namespace

std::vector<Violation> validate_sequence(const Sequence& seq, int num_types) {
    std::vector<Violation> out;
    if (!(seq.horizon > 0.0) || !std::isfinite(seq.horizon)) {
        out.push_back({0, "horizon must be positive and finite"});
    }
    bool order_reported = false;
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const Event& ev = seq.events[i];
        if (!std::isfinite(ev.time) || ev.time < 0.0) {
            out.push_back({i, "time must be finite and non-negative at index " + std::to_string(i)});
            continue;
        }
        if (ev.time <= 0.0 || ev.time > seq.horizon) {
            out.push_back({i, "time not in (0, horizon] at index " + std::to_string(i)});
        }
        if (i > 0 && !(seq.events[i - 1].time < ev.time) && !order_reported) {
            out.push_back({i, "not strictly increasing at index " + std::to_string(i)});
            order_reported = true;
        }
    }
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        if (seq.events[i].type < 0 || seq.events[i].type >= num_types) {
            out.push_back({i, "type out of range at index " + std::to_string(i)});
            break;
        }
    }
    return out;
}

std::string dataset_to_jsonl(const Dataset& dataset) {
    std::ostringstream out;
    out << json{{"num_types", dataset.num_types}}.dump() << "\n";
    for (std::size_t i = 0; i < dataset.sequences.size(); ++i) {
        json j = sequence_to_json(dataset.sequences[i]);
        if (dataset.has_splits()) j["split"] = to_string(dataset.split_labels[i]);
        out << j.dump() << "\n";
    }
    return out.str();
}

Dataset dataset_from_jsonl(const std::string& text, std::optional<int> expected_types) {
    Dataset dataset;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    bool any_split = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!header_seen) {
            if (!j.is_object() || !j.contains("num_types")) {
                throw DataError("line 1: expected header object {\"num_types\": U}");
            }
            dataset.num_types = j.at("num_types").get<int>();
            if (dataset.num_types < 1) throw DataError("line 1: num_types must be >= 1");
            header_seen = true;
            continue;
        }
        Sequence seq = sequence_from_json(j, line_no);
        std::size_t seq_index = dataset.sequences.size();
        auto violations = validate_sequence(seq, dataset.num_types);
        if (!violations.empty()) {
            throw DataError("sequence " + std::to_string(seq_index) + " (line " + std::to_string(line_no) +
                            "): " + violations.front().message);
        }
        if (j.contains("split")) {
            if (!any_split && seq_index > 0) {
                throw DataError("line " + std::to_string(line_no) + ": split labels must cover all sequences");
            }
            any_split = true;
            dataset.split_labels.push_back(split_from_string(j.at("split").get<std::string>()));
        } else if (any_split) {
            throw DataError("line " + std::to_string(line_no) + ": split labels must cover all sequences");
        }
        dataset.sequences.push_back(std::move(seq));
    }
    if (!header_seen) throw DataError("empty dataset file: missing header line");
    if (expected_types && *expected_types != dataset.num_types) {
        throw DataError("type-count mismatch: expected " + std::to_string(*expected_types) + ", file has " +
                        std::to_string(dataset.num_types));
    }
    return dataset;
}

Dataset load_dataset(const std::filesystem::path& path, std::optional<int> expected_types) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return dataset_from_jsonl(buf.str(), expected_types);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    out << dataset_to_jsonl(dataset);
    if (!out) throw DataError("write failed: " + path.string());
}

Dataset split_dataset(const Dataset& dataset, std::array<double, 3> fractions, std::uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (!(fractions[0] > 0.0 && fractions[1] > 0.0 && fractions[2] > 0.0) || std::abs(sum - 1.0) > 1e-9) {
        throw DataError("split fractions must be positive and sum to 1");
    }
    const std::size_t n = dataset.sequences.size();
    // Content-keyed shuffle: ordering depends on (sequence bytes, seed) only,
    // so the per-split multisets are invariant under index relabeling.
    std::vector<std::pair<std::uint64_t, std::string>> keys(n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        std::string line = sequence_line(dataset.sequences[i]);
        keys[i] = {hash_bytes(line, seed), std::move(line)};
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (keys[a].first != keys[b].first) return keys[a].first < keys[b].first;
        if (keys[a].second != keys[b].second) return keys[a].second < keys[b].second;
        return a < b;
    });
    const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::floor(fractions[2] * static_cast<double>(n)));
    const std::size_t n_train = n - n_val - n_test;

    Dataset out = dataset;
    out.split_labels.assign(n, Split::train);
    for (std::size_t rank = 0; rank < n; ++rank) {
        Split label = rank < n_train ? Split::train : rank < n_train + n_val ? Split::val : Split::test;
        out.split_labels[order[rank]] = label;
    }
    return out;
}

}  // namespace sahp
