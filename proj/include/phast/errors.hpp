#pragma once

#include <stdexcept>
#include <string>

namespace phast {

// Contract breaches (dimension mismatches, bad preconditions). These signal
// caller bugs and are never caught internally.
struct ContractViolation : std::invalid_argument {
  explicit ContractViolation(const std::string& what)
      : std::invalid_argument(what) {}
};

// Non-finite values or failed solves inside numeric kernels. Carries enough
// context (offending input, layer name) to locate the fault.
struct NumericFault : std::runtime_error {
  explicit NumericFault(const std::string& what) : std::runtime_error(what) {}
};

// Integrator-level fault (non-finite state, fixed point not converging);
// carries the step index where it happened.
struct IntegrationFault : std::runtime_error {
  IntegrationFault(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_index(step) {}
  long step_index;
};

// Simulator fault: ground-truth integration left the finite domain.
struct SimulationFault : std::runtime_error {
  SimulationFault(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_index(step) {}
  long step_index;
};

// Closed-loop control fault; names the estimator that produced the bad value.
struct ControlFault : std::runtime_error {
  explicit ControlFault(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace phast
