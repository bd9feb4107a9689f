#pragma once

#include <span>
#include <string>

#include "lbt/model.hpp"
#include "lbt/optimizer.hpp"

namespace lbt {

// Everything a run needs: model hyperparameters, optimizer settings, dataset
// location and split fractions, output directory. Resolved from (highest
// precedence first): command-line overrides, the config file, dataset-kind
// defaults, global defaults.
struct RunConfig {
    ModelConfig model;
    LambConfig lamb;
    int epochs = 100;
    int batch_size = 32;
    bool augment = true;
    bool keep_best = false;
    std::string data_root;
    std::string dataset_kind; // sipakmed | herlev | custom (empty = unset)
    std::string taxonomy_file;
    double test_fraction = 0.2;
    double val_fraction = 0.1; // carved out of the train split
    std::string out_dir;
};

// Config files are plain text, one `key = value` per line, `#` comments.
// Values are JSON literals; unquoted word values are read as strings.
// Unknown keys are hard errors. Either input may be empty.
RunConfig resolve_run_config(const std::string& config_path,
                             std::span<const std::string> overrides);

FitConfig to_fit_config(const RunConfig& rc);

} // namespace lbt
