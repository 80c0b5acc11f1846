#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "turncal/config.hpp"

namespace turncal {

// CLI entry points, factored out of main for testing. Each returns a process
// exit code and narrates progress on `out`.

int cmd_generate(const RunConfig& config, std::ostream& out);
int cmd_eval(const RunConfig& config, std::ostream& out);
int cmd_placebo(const RunConfig& config, std::ostream& out);
int cmd_compare_format(const RunConfig& config, std::ostream& out);

// Rebuilds every table from stored record files alone. Empty `files` scans
// output_dir/records. Dataset names come from the {dataset}__... filename
// convention.
int cmd_report(const RunConfig& config, const std::vector<std::filesystem::path>& files,
               std::ostream& out);

// {dataset}__{method}__{target}__{condition}.jsonl
std::string record_file_name(const std::string& dataset, const std::string& method, Target target,
                             Condition condition);

}  // namespace turncal
