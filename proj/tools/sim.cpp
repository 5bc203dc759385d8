#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedrec/commands.hpp"
#include "fedrec/config.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Federated-learning poisoning and recovery simulator"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "Run original training and store its history");
  train->add_option("-c,--config", config_path, "Experiment config (INI)")->required();

  std::string method = "fedrecover";
  auto* recover = app.add_subcommand("recover", "Recover a model from the stored history");
  recover->add_option("-c,--config", config_path, "Experiment config (INI)")->required();
  recover->add_option("-m,--method", method, "scratch | historical | fedrecover | finetune")
      ->check(CLI::IsMember({"scratch", "historical", "fedrecover", "finetune"}));

  std::vector<std::string> dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Tabulate the summaries of finished runs");
  report->add_option("dirs", dirs, "Run directories")->required();
  report->add_option("-o,--output", report_out, "Write the CSV here instead of stdout");

  auto* show = app.add_subcommand("config", "Print the canonical form of a config");
  show->add_option("-c,--config", config_path, "Experiment config (INI)")->required();

  CLI11_PARSE(app, argc, argv);

  if (*train) {
    const auto out = fedrec::cmd_train(fedrec::parse_config(config_path));
    std::cout << out.summary_path.string() << "\n";
  } else if (*recover) {
    const auto out = fedrec::cmd_recover(fedrec::parse_config(config_path),
                                         fedrec::recovery_method_from_string(method));
    std::cout << out.summary_path.string() << "\n";
  } else if (*report) {
    std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
    const std::string csv = fedrec::cmd_report(paths);
    if (report_out.empty()) {
      std::cout << csv;
    } else {
      std::ofstream f(report_out, std::ios::binary);
      if (!(f << csv)) throw fedrec::IoError("cannot write " + report_out);
    }
  } else if (*show) {
    std::cout << fedrec::serialize_config(fedrec::parse_config(config_path));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
