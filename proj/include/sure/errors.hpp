#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sure {

// Base class for all library errors. Subclasses carry the failure payload
// so callers can branch without string matching.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InvalidLabelCode : public Error {
public:
    InvalidLabelCode(std::size_t index, int value)
        : Error("invalid label code " + std::to_string(value) + " at index " +
                std::to_string(index)),
          index(index),
          value(value) {}
    std::size_t index;
    int value;
};

class NoUsableViews : public Error {
public:
    explicit NoUsableViews(std::string study_id)
        : Error("no usable views in study " + study_id), study_id(std::move(study_id)) {}
    std::string study_id;
};

class EmptyContext : public Error {
public:
    EmptyContext() : Error("cross-attention context has zero rows") {}
};

class MissingFrontal : public Error {
public:
    MissingFrontal() : Error("fusion requires at least one frontal token row") {}
};

class ShapeMismatch : public Error {
public:
    explicit ShapeMismatch(const std::string& what) : Error("shape mismatch: " + what) {}
};

class NumericalFailure : public Error {
public:
    explicit NumericalFailure(std::string location)
        : Error("non-finite value at " + location), location(std::move(location)) {}
    std::string location;
};

class MissingLabels : public Error {
public:
    explicit MissingLabels(std::string study_id)
        : Error("study " + study_id + " lacks per-sentence label vectors"),
          study_id(std::move(study_id)) {}
    std::string study_id;
};

class EmptyWeightSet : public Error {
public:
    EmptyWeightSet() : Error("cannot normalize an empty weight set") {}
};

class AlignmentError : public Error {
public:
    explicit AlignmentError(const std::string& what) : Error("alignment error: " + what) {}
};

class ZeroVector : public Error {
public:
    ZeroVector() : Error("cosine similarity of a zero vector is undefined") {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format error: " + what) {}
};

class TruncationError : public Error {
public:
    TruncationError(std::uint64_t expected_bytes, std::uint64_t actual_bytes)
        : Error("truncated payload: expected " + std::to_string(expected_bytes) +
                " bytes, got " + std::to_string(actual_bytes)),
          expected_bytes(expected_bytes),
          actual_bytes(actual_bytes) {}
    std::uint64_t expected_bytes;
    std::uint64_t actual_bytes;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line_no, const std::string& what)
        : Error("line " + std::to_string(line_no) + ": " + what), line_no(line_no) {}
    std::size_t line_no;
};

class CorpusRejected : public Error {
public:
    CorpusRejected(std::size_t bad_lines, std::size_t total_lines)
        : Error("corpus rejected: " + std::to_string(bad_lines) + " of " +
                std::to_string(total_lines) + " lines failed to parse"),
          bad_lines(bad_lines),
          total_lines(total_lines) {}
    std::size_t bad_lines;
    std::size_t total_lines;
};

class TrainingDiverged : public Error {
public:
    explicit TrainingDiverged(const std::string& what) : Error("training diverged: " + what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

}  // namespace sure
