#pragma once
// Recovering the counter block from free-form model output.

#include <string>
#include <string_view>

#include "json.hpp"

#include "counterlens/errors.hpp"
#include "counterlens/metrics.hpp"

namespace counterlens {

enum class ExtractionKind { NoBlock, Ambiguous, InvalidJson, MissingKey, ExtraKey, NonNumeric, OutOfRange };

inline std::string_view extraction_kind_name(ExtractionKind k) noexcept {
  switch (k) {
    case ExtractionKind::NoBlock: return "no_block";
    case ExtractionKind::Ambiguous: return "ambiguous";
    case ExtractionKind::InvalidJson: return "invalid_json";
    case ExtractionKind::MissingKey: return "missing_key";
    case ExtractionKind::ExtraKey: return "extra_key";
    case ExtractionKind::NonNumeric: return "non_numeric";
    case ExtractionKind::OutOfRange: return "out_of_range";
  }
  return "unknown";
}

// Carries the complete model text so failures can be inspected later.
class ExtractionError : public Error {
 public:
  ExtractionError(ExtractionKind kind, const std::string& what, std::string raw, std::string key = {})
      : Error(std::string(extraction_kind_name(kind)) + ": " + what),
        kind_(kind),
        raw_(std::move(raw)),
        key_(std::move(key)) {}

  ExtractionKind kind() const noexcept { return kind_; }
  const std::string& raw_text() const noexcept { return raw_; }
  const std::string& key() const noexcept { return key_; }

 private:
  ExtractionKind kind_;
  std::string raw_;
  std::string key_;
};

struct Extraction {
  NormalizedCounters normalized;
  std::optional<std::string> compiler_flags;
  std::optional<std::string> architecture;
};

struct ExtractOptions {
  // Lenient: unknown keys ignored, metrics may be missing, bare numbers accepted.
  bool lenient = false;
};

namespace detail {

// [begin, end) of the first balanced {...} outside string literals, or npos.
inline std::pair<std::size_t, std::size_t> first_object(std::string_view text) {
  const auto begin = text.find('{');
  if (begin == std::string_view::npos) return {begin, begin};
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = begin; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}' && --depth == 0) {
      return {begin, i + 1};
    }
  }
  return {std::string_view::npos, std::string_view::npos};
}

}  // namespace detail

// The text of the single ```json fenced block, else the first balanced object.
inline std::string locate_json_block(std::string_view text) {
  static constexpr std::string_view kFence = "```json";
  const auto first = text.find(kFence);
  if (first != std::string_view::npos) {
    if (text.find(kFence, first + kFence.size()) != std::string_view::npos) {
      throw ExtractionError(ExtractionKind::Ambiguous, "more than one ```json block", std::string(text));
    }
    const auto body = first + kFence.size();
    auto close = text.find("```", body);
    if (close == std::string_view::npos) close = text.size();
    return std::string(text.substr(body, close - body));
  }
  const auto [b, e] = detail::first_object(text);
  if (b == std::string_view::npos) {
    throw ExtractionError(ExtractionKind::NoBlock, "no JSON block found", std::string(text));
  }
  return std::string(text.substr(b, e - b));
}

inline Extraction extract_json(std::string_view text, const ExtractOptions& options = {}) {
  const std::string raw(text);
  const auto block = locate_json_block(text);
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(block);
  } catch (const nlohmann::json::exception& e) {
    throw ExtractionError(ExtractionKind::InvalidJson, e.what(), raw);
  }
  if (!doc.is_object()) throw ExtractionError(ExtractionKind::InvalidJson, "block is not an object", raw);

  Extraction out;
  for (const auto& [key, value] : doc.items()) {
    if (key == kCompilerFlagsKey || key == kArchitectureKey) {
      if (!value.is_string()) {
        throw ExtractionError(ExtractionKind::NonNumeric, key + " must be a string", raw, key);
      }
      (key == kCompilerFlagsKey ? out.compiler_flags : out.architecture) = value.get<std::string>();
      continue;
    }
    const auto id = metric_from_key(key);
    if (!id) {
      if (options.lenient) continue;
      throw ExtractionError(ExtractionKind::ExtraKey, "unexpected key " + key, raw, key);
    }
    std::optional<double> v;
    if (value.is_string()) {
      v = parse_decimal(value.get<std::string>());
    } else if (options.lenient && value.is_number()) {
      v = value.get<double>();
    }
    if (!v) throw ExtractionError(ExtractionKind::NonNumeric, "value of " + key + " is not a decimal", raw, key);
    if (!(*v >= 0.0 && *v <= 1.0)) {
      throw ExtractionError(ExtractionKind::OutOfRange,
                            key + " = " + value.dump() + " outside [0, 1]", raw, key);
    }
    out.normalized.set(*id, *v);
  }
  if (!options.lenient) {
    for (auto key : {kCompilerFlagsKey, kArchitectureKey}) {
      if (!doc.contains(key)) {
        throw ExtractionError(ExtractionKind::MissingKey, "missing key " + std::string(key), raw, std::string(key));
      }
    }
    for (auto id : kAllMetrics) {
      if (!out.normalized.has(id)) {
        throw ExtractionError(ExtractionKind::MissingKey, "missing key " + std::string(metric_key(id)), raw,
                              std::string(metric_key(id)));
      }
    }
  }
  return out;
}

}  // namespace counterlens
