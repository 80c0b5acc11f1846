#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "turncal/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"turncal: confidence calibration over multi-turn dialogues"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> record_files;

  CLI::App* generate = app.add_subcommand("generate", "build a dialogue corpus from secrets");
  CLI::App* eval = app.add_subcommand("eval", "run confidence estimators and write records");
  CLI::App* placebo = app.add_subcommand("placebo", "length-control comparison of confidence");
  CLI::App* compare = app.add_subcommand("compare-format", "multi-turn vs summarized prompts");
  CLI::App* report = app.add_subcommand("report", "rebuild tables from stored records");
  for (CLI::App* sub : {generate, eval, placebo, compare, report})
    sub->add_option("-c,--config", config_path, "config file (JSON)")->required();
  report->add_option("files", record_files, "record files (default: <output_dir>/records/*.jsonl)");

  CLI11_PARSE(app, argc, argv);

  try {
    turncal::RunConfig config = turncal::load_config(config_path);
    if (generate->parsed()) return turncal::cmd_generate(config, std::cout);
    if (eval->parsed()) return turncal::cmd_eval(config, std::cout);
    if (placebo->parsed()) return turncal::cmd_placebo(config, std::cout);
    if (compare->parsed()) return turncal::cmd_compare_format(config, std::cout);
    if (report->parsed()) {
      std::vector<std::filesystem::path> files(record_files.begin(), record_files.end());
      return turncal::cmd_report(config, files, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
