#include "tempo/types.hpp"

namespace tempo {

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Tempo:
      return "tempo";
    case Method::Grpo:
      return "grpo";
    case Method::Hepo:
      return "hepo";
    case Method::Gae:
      return "gae";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  if (name == "tempo") return Method::Tempo;
  if (name == "grpo") return Method::Grpo;
  if (name == "hepo") return Method::Hepo;
  if (name == "gae") return Method::Gae;
  return std::nullopt;
}

}  // namespace tempo
