#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hge/errors.hpp"
#include "hge/harness.hpp"

namespace hge {

/// Validation failure tied to one manifest key (dotted path).
class ManifestError : public ConfigError {
 public:
  ManifestError(const std::string& key, const std::string& what) : ConfigError(key + ": " + what), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct Manifest {
  RunConfig run;
  std::uint64_t seed = 1;  // first seed
  int seeds = 5;           // consecutive seeds starting at `seed`
  int jobs = 1;
  std::string out = "runs";
  bool trace = false;
  bool fail_on_dnf = false;

  std::vector<std::uint64_t> seed_list() const;
};

/// Values given on the command line or in the environment; each replaces the
/// manifest key of the same name.
struct ManifestOverrides {
  std::optional<std::string> scenario;
  std::optional<std::string> method;
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;
  std::optional<int> jobs;
  std::optional<std::string> out;
  std::optional<bool> trace;
  std::optional<bool> fail_on_dnf;
};

/// JSON manifest with nested sections stream, model, ge, hge, harness.
/// scenario and method have no default. Unknown keys are rejected. Section
/// keys override the scenario preset.
Manifest parse_manifest(const std::string& text, const ManifestOverrides& overrides = {});

/// Every key, including the resolved scenario preset.
std::string emit_manifest(const Manifest& m);

Manifest default_manifest(const std::string& scenario, const std::string& method);

}  // namespace hge
