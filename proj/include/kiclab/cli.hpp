#pragma once

// Command-line front end and its configuration file handling.
//
// Config files are INI style. Sections mirror the library config types:
// [scenario], [ofdm], [canceller], [dfkic], [ki_channel], [si_channel] and
// [sweep]. Any key can be overridden with `--set section.key=value`.

#include "kiclab/labbench.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace kiclab {

// "section.key" -> raw value.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::filesystem::path& path);
// Applies one "section.key=value" assignment.
void apply_override(ConfigMap& map, std::string_view assignment);

struct SweepSpec {
    GridRange ki{40.0, 56.0, 2.0};
    GridRange si{30.0, 50.0, 4.0};
    std::vector<Mode> modes{Mode::base_kic, Mode::df_kic};
    int seeds = 3;
};

struct RunManifest {
    ScenarioConfig scenario;
    SweepSpec sweep;
};

// Defaults, then the map. Unknown keys and unparsable values throw
// ValidationError naming the key. default_seed (KICLAB_SEED) applies unless
// the map sets scenario.seed.
RunManifest build_manifest(const ConfigMap& map, std::optional<std::uint64_t> default_seed = std::nullopt);

// Every key of the manifest as a config file; parses back to the same manifest.
std::string format_manifest(const RunManifest& manifest);

// Exit codes: 0 success, 1 validation error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace kiclab
