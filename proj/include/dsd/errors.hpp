// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dsd {

// Shape/dimension contract violations (mismatched extents, bad ranks).
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration values (ranges, missing keys, bad enum names).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Timestep or index outside the valid range.
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Token id outside the vocabulary.
struct VocabError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Gradient requested through an op that does not provide one.
struct UnsupportedOpError : std::logic_error {
    using std::logic_error::logic_error;
};

// Embedding with zero norm cannot enter a cosine similarity.
struct DegenerateEmbeddingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Pair curation found no winners or no losers.
struct EmptyPoolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file content; carries the 1-based offending line when known.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg, std::size_t line_no = 0)
        : std::runtime_error(line_no ? msg + " (line " + std::to_string(line_no) + ")" : msg),
          line(line_no) {}
    std::size_t line = 0;
};

// Cross-record references that do not resolve.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; carries the global step index.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg, std::size_t at_step)
        : std::runtime_error(msg + " (step " + std::to_string(at_step) + ")"), step(at_step) {}
    std::size_t step = 0;
};

// Checkpoint file schema incompatible with this build.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dsd
