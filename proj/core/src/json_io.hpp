#pragma once

// JSON conversion of model-level structs. Private to the library.

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "hmmt/errors.hpp"

#include "hmmt/model.hpp"

namespace hmmt::detail {

using nlohmann::json;

// Throws ConfigError naming `where` for keys outside `allowed`.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where);

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T get_required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + "." + key + " is required");
  return get_or<T>(j, key, T{}, where);
}

json to_json(const ModalitySpec& s);
ModalitySpec modality_from_json(const json& j, const std::string& where);
json to_json(const ModalityRegistry& r);
ModalityRegistry registry_from_json(const json& j, const std::string& where);
json to_json(const BlockConfig& b);
BlockConfig block_from_json(const json& j, BlockConfig fallback, const std::string& where);
json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j, const std::string& where);
json to_json(const SharingConfig& s);
SharingConfig sharing_from_json(const json& j, const std::string& where);
json to_json(const TaskSpec& t);
TaskSpec task_from_json(const json& j, const std::string& where);

}  // namespace hmmt::detail
