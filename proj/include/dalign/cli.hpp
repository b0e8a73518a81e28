#pragma once

#include "dalign/episodes.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dalign {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (`args[0]` is the program name). Exit 0 on success,
/// 1 on domain/format/IO errors, 2 on usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Fixed-format `key: value` report. Contains nothing that depends on timing
/// or thread count.
std::string format_eval_report(const EvalReport& report, const EpisodeSpec& spec,
                               const PipelineConfig& config);

/// Per-episode `episode<TAB>accuracy` table with a header row.
std::string format_accuracy_table(const EvalReport& report);

/// Worker count from DA_THREADS, or 0 (= hardware concurrency) when unset.
/// Throws DomainError on a malformed value.
std::size_t threads_from_environment();

} // namespace dalign
