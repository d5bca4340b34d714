#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "aegis/core/types.hpp"

namespace aegis {

/// Opaque state -> action map. Attack and defense code only ever see this
/// interface, never the concrete controller behind it.
class BlackBoxPolicy {
 public:
  virtual ~BlackBoxPolicy() = default;

  /// Deterministic at evaluation time; result has action_dim() entries and is
  /// clipped to the actuator bounds.
  virtual Action act(const State& s) const = 0;

  virtual std::size_t action_dim() const = 0;
  virtual std::string name() const = 0;
};

using PolicyPtr = std::shared_ptr<const BlackBoxPolicy>;

}  // namespace aegis
