#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dode/schedule.hpp"

namespace dode {

using ScheduleFn = std::function<ScheduleEval(const LogSnrSchedule&, double)>;

struct OracleCheck {
  std::string name;
  bool passed;
  double error;      // worst observed discrepancy
  double tolerance;
  std::string detail;
};

struct OracleReport {
  std::vector<OracleCheck> checks;
  bool all_passed() const;
  const OracleCheck* first_failure() const;
  std::string to_json() const;
};

/// Analytic-oracle validations. `schedule_fn` replaces eval_schedule in the
/// schedule identity checks only, so a broken formula can be fed in.
OracleReport run_oracle_suite(std::uint64_t seed, const ScheduleFn& schedule_fn = eval_schedule);

}  // namespace dode
