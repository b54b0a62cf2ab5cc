#include <iostream>

#include "common.hpp"
#include "tdce/common/error.hpp"
#include "tdce/imaging/png_io.hpp"
#include "tdce/pipeline/case_record.hpp"
#include "tdce/study/state.hpp"

// Exit codes: 0 success, 1 validation error (bad flags, config, manifest or
// image), 2 runtime failure.
int main(int argc, char** argv) {
  using namespace tdce;
  CLI::App app{"TDCE mammography triage: training, evaluation and observer study"};
  app.set_version_flag("--version", cli::kToolVersion);
  app.require_subcommand(1);
  cli::Commands commands;
  cli::register_data_commands(app, commands);
  cli::register_model_commands(app, commands);
  cli::register_eval_commands(app, commands);
  cli::register_study_commands(app, commands);
  cli::register_selftest_command(app, commands);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    for (auto& c : commands) {
      if (!c.sub->parsed()) continue;
      c.options->finalize();
      return c.run();
    }
    std::cerr << "error: no command\n";
    return 1;
  } catch (const pipeline::ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const imaging::ImageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const study::StudyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.status() >= 500 ? 2 : 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
}
