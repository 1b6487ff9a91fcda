#ifndef EMDEM_IO_HPP
#define EMDEM_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "emdem/beta.hpp"
#include "emdem/core.hpp"
#include "emdem/pipeline.hpp"

namespace emdem {

/// Binary PPM (P6). Raw values map to linear reals as-is on read;
/// maxval 255 or 65535 (big-endian 16-bit per the netpbm rule).
RgbImage read_image(const std::filesystem::path& path);
RgbImage read_image(const std::filesystem::path& path, int& maxval_out);

/// Export with clamping to [0, maxval] and round-half-to-even.
void write_image(const RgbImage& img, const std::filesystem::path& path,
                 int maxval = 255);

/// Binary PGM (P5) plus a `<path>.meta` sidecar carrying pattern,
/// sigma, bit_depth, black_level and seed. Reads map raw values to
/// linear reals by subtracting black_level.
MosaicFrame read_mosaic(const std::filesystem::path& path);
void write_mosaic(const MosaicFrame& frame, const std::filesystem::path& path,
                  std::uint64_t seed = 0);

/// Line-oriented tree format:
///   dtree v1 <n_nodes> <arity>
///   N <id> <attr> <threshold> <left_id> <right_id>
///   L <id> <d_value>
/// Node ids are the storage indices; the root is id 0. Thresholds and
/// leaf values are written with 17 significant digits.
RegressionTree parse_tree(const std::string& text);
std::string format_tree(const RegressionTree& tree);
RegressionTree read_tree(const std::filesystem::path& path);
void write_tree(const RegressionTree& tree, const std::filesystem::path& path);

/// `key = value` run configuration; unknown keys are errors. The
/// accepted keys cover every EmConfig and BetaParams field; "auto" is
/// accepted where the config has an auto mode.
EmConfig parse_config_text(const std::string& text);
EmConfig read_config(const std::filesystem::path& path);

/// Minimal CSV (no quoting; fields must not contain commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
std::string format_csv(const CsvTable& table);
CsvTable parse_csv(const std::string& text);
void write_csv(const CsvTable& table, const std::filesystem::path& path);
CsvTable read_csv(const std::filesystem::path& path);

void write_text_file(const std::string& text,
                     const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace emdem

#endif  // EMDEM_IO_HPP
