#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sahp {

/// Error raised by malformed or invalid input data (files, sequences, configs).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Error raised when a numeric routine leaves its domain (non-finite loss,
/// infeasible parameters, diverging quadrature).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// One typed, timestamped event. Times are abstract non-negative reals.
struct Event {
    int type = 0;
    double time = 0.0;

    bool operator==(const Event&) const = default;
};

/// An ordered event stream observed on (0, horizon].
struct Sequence {
    std::vector<Event> events;
    double horizon = 0.0;

    std::size_t size() const { return events.size(); }
    bool empty() const { return events.empty(); }

    bool operator==(const Sequence&) const = default;
};

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// A collection of sequences over a common type set [0, num_types),
/// with optional train/val/test labels per sequence index.
struct Dataset {
    int num_types = 1;
    std::vector<Sequence> sequences;
    // Empty until split_dataset assigns one label per sequence.
    std::vector<Split> split_labels;

    bool has_splits() const { return !split_labels.empty(); }

    /// Indices of sequences carrying the given label (all indices when unlabeled
    /// and `s == train`, so unlabeled datasets can be fitted directly).
    std::vector<std::size_t> indices_of(Split s) const;

    bool operator==(const Dataset&) const = default;
};

/// One violated invariant, pointing at the first offending event.
struct Violation {
    std::size_t event_index = 0;
    std::string message;
};

struct DatasetStats {
    int num_types = 0;
    std::size_t num_sequences = 0;
    std::size_t num_events = 0;
    std::size_t min_length = 0;
    double mean_length = 0.0;
    std::size_t max_length = 0;
    std::map<std::string, std::size_t> split_counts;
};

DatasetStats compute_stats(const Dataset& dataset);

}  // namespace sahp
