#pragma once

#include "ivf/config.hpp"

#include <iosfwd>

namespace ivf {

struct CommandOptions {
  bool allow_nonconverged = false;
};

// Exit status of a command that completed without throwing.
inline constexpr int kExitOk = 0;
inline constexpr int kExitNotConverged = 3;

// Each command writes its artifacts and the effective config beneath
// config.output.directory and reports to `log`. Errors are thrown.
int cmd_simulate(const RunConfig& config, std::ostream& log);
int cmd_fit(const RunConfig& config, const CommandOptions& options, std::ostream& log);
int cmd_predict(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& log);
int cmd_diagnose(const RunConfig& config, std::ostream& log);

}  // namespace ivf
