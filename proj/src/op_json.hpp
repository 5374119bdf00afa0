#pragma once

// Operator graphs as a JSON node table. Shared sub-operators are written
// once and referenced by index, so sharing survives a round trip.

#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "invnet/operators.hpp"

namespace invnet::detail {

using Json = nlohmann::json;

Json shape_json(const Shape& s);
Shape shape_from_json(const Json& j);
std::string doubles_json(std::span<const double> v);
std::vector<double> doubles_from_json(const Json& j);

class OpWriter {
 public:
  std::size_t add(const LinearOp& op);
  Json take() { return std::move(table_); }

 private:
  Json table_ = Json::array();
  std::map<const void*, std::size_t> ids_;
};

class OpReader {
 public:
  explicit OpReader(const Json& table);
  LinearOp get(std::size_t id);

 private:
  const Json& table_;
  std::vector<std::optional<LinearOp>> built_;
  std::vector<bool> visiting_;
};

/// Reads a required member, raising IoError naming `key` when absent.
const Json& member(const Json& j, const char* key);

}  // namespace invnet::detail
