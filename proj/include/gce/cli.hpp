#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gce::cli {

enum class Command { kPretrain, kFinetune, kGenerate, kEvaluate, kReconstruct, kInspect };

std::string_view command_name(Command c);

// Bad flags, unknown keys, unparsable values, missing inputs. Exit code 2.
class UsageError : public std::runtime_error {
 public:
  UsageError(const std::string& message, std::string usage = {})
      : std::runtime_error(message), usage_(std::move(usage)) {}
  const std::string& usage() const noexcept { return usage_; }

 private:
  std::string usage_;
};

// --help was given; the text is printed and the process exits 0.
struct HelpRequested {
  std::string text;
};

struct RunConfig {
  Command command = Command::kInspect;
  // Named input paths (data, model, seeds, generated, reference, training,
  // resume) plus the literal `smiles` for reconstruct.
  std::map<std::string, std::string> inputs;
  std::string out_dir;
  std::string config_path;
  std::string manifest_path;
  // Layered settings: manifest < config file < --set / dedicated flags.
  // Values are type-checked against the command's key table.
  std::map<std::string, std::string> settings;
};

// Settings keys accepted by a command.
std::vector<std::string> allowed_keys(Command c);

// key=value lines; '#' starts a comment. Unknown keys and malformed lines
// raise UsageError naming the file and line.
std::map<std::string, std::string> read_config_file(const std::string& path, Command c);

RunConfig parse_args(const std::vector<std::string>& args);

// Executes the command. Diagnostics go to `err`, reports to `out`.
// Returns 0 on success and 1 on a runtime failure; files written by a
// failed run are removed.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

// parse_args + run with exit codes 0/1/2.
int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline constexpr std::uint32_t kManifestVersion = 1;

}  // namespace gce::cli
