#pragma once

#include <array>
#include <filesystem>
#include <optional>

#include "sahp/types.hpp"

namespace sahp {

/// Violations of the Sequence/Event invariants, empty when valid.
/// Checks: finite non-negative times, times in (0, horizon], strictly
/// increasing order, type ids within [0, num_types).
std::vector<Violation> validate_sequence(const Sequence& seq, int num_types);

/// Reads the JSONL dataset format: a {"num_types": U} header line followed by
/// one {"horizon": T, "events": [{"type": v, "time": t}, ...]} object per
/// sequence. A missing horizon defaults to the last event time.
/// Throws DataError with a line number on parse failures and with the
/// offending sequence/event on validation failures.
Dataset load_dataset(const std::filesystem::path& path,
                     std::optional<int> expected_types = std::nullopt);

/// Writes the JSONL format read by load_dataset. Byte-stable: identical
/// datasets serialize to identical files.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

std::string dataset_to_jsonl(const Dataset& dataset);
Dataset dataset_from_jsonl(const std::string& text,
                           std::optional<int> expected_types = std::nullopt);

/// Assigns train/val/test labels. Fractions must be positive and sum to 1
/// within 1e-9; val and test sizes are floor(fraction * n) with the
/// remainder going to train. The shuffle is keyed on sequence content and
/// seed, so the assignment is a function of the sequence multiset alone:
/// relabeling indices does not change which sequences land in which split.
Dataset split_dataset(const Dataset& dataset, std::array<double, 3> fractions,
                      std::uint64_t seed);

}  // namespace sahp
