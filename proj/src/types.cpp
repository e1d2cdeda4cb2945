#include "sahp/types.hpp"

#include <algorithm>

namespace sahp {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split label: " + s);
}

std::vector<std::size_t> Dataset::indices_of(Split s) const {
    std::vector<std::size_t> out;
    if (split_labels.empty()) {
        if (s == Split::train) {
            out.resize(sequences.size());
            for (std::size_t i = 0; i < sequences.size(); ++i) out[i] = i;
        }
        return out;
    }
    for (std::size_t i = 0; i < split_labels.size(); ++i) {
        if (split_labels[i] == s) out.push_back(i);
    }
    return out;
}

DatasetStats compute_stats(const Dataset& dataset) {
    DatasetStats stats;
    stats.num_types = dataset.num_types;
    stats.num_sequences = dataset.sequences.size();
    if (!dataset.sequences.empty()) {
        stats.min_length = dataset.sequences.front().size();
        stats.max_length = 0;
        for (const auto& seq : dataset.sequences) {
            stats.num_events += seq.size();
            stats.min_length = std::min(stats.min_length, seq.size());
            stats.max_length = std::max(stats.max_length, seq.size());
        }
        stats.mean_length = static_cast<double>(stats.num_events) /
                            static_cast<double>(stats.num_sequences);
    }
    if (dataset.has_splits()) {
        for (Split s : {Split::train, Split::val, Split::test}) {
            stats.split_counts[to_string(s)] = dataset.indices_of(s).size();
        }
    }
    return stats;
}

}  // namespace sahp
