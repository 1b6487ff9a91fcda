#include "emdem/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace emdem {

namespace {

[[noreturn]] void fail(const std::string& what) {
  throw std::runtime_error(what);
}

std::string load_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void store_bytes(const std::string& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("write failed for " + path.string());
}

// Next whitespace-delimited token, skipping '#' comments per netpbm.
std::string pnm_token(const std::string& s, std::size_t& pos) {
  while (pos < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) {
    ++pos;
  }
  if (start == pos) fail("malformed pnm header");
  return s.substr(start, pos - start);
}

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  std::size_t payload = 0;
};

PnmHeader parse_pnm_header(const std::string& s) {
  PnmHeader h;
  std::size_t pos = 0;
  h.magic = pnm_token(s, pos);
  h.width = std::stoi(pnm_token(s, pos));
  h.height = std::stoi(pnm_token(s, pos));
  h.maxval = std::stoi(pnm_token(s, pos));
  if (h.width <= 0 || h.height <= 0) fail("pnm: bad dimensions");
  if (h.maxval <= 0 || h.maxval >= 65536) fail("pnm: unsupported maxval");
  if (pos >= s.size() ||
      !std::isspace(static_cast<unsigned char>(s[pos]))) {
    fail("pnm: missing header terminator");
  }
  h.payload = pos + 1;  // exactly one whitespace byte after maxval
  return h;
}

double read_pnm_value(const std::string& s, std::size_t& pos, int maxval) {
  if (maxval < 256) {
    if (pos >= s.size()) fail("pnm: truncated payload");
    return static_cast<double>(static_cast<unsigned char>(s[pos++]));
  }
  if (pos + 1 >= s.size()) fail("pnm: truncated payload");
  const unsigned hi = static_cast<unsigned char>(s[pos]);
  const unsigned lo = static_cast<unsigned char>(s[pos + 1]);
  pos += 2;
  return static_cast<double>((hi << 8) | lo);  // big-endian per netpbm
}

void append_pnm_value(std::string& out, double v, int maxval) {
  const double clamped = std::clamp(v, 0.0, static_cast<double>(maxval));
  const auto q = static_cast<std::uint32_t>(std::nearbyint(clamped));
  if (maxval < 256) {
    out.push_back(static_cast<char>(q & 0xff));
  } else {
    out.push_back(static_cast<char>((q >> 8) & 0xff));
    out.push_back(static_cast<char>(q & 0xff));
  }
}

std::string pnm_header_text(const char* magic, int w, int h, int maxval) {
  std::ostringstream os;
  os << magic << "\n" << w << " " << h << "\n" << maxval << "\n";
  return os.str();
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  int maxval = 0;
  return read_image(path, maxval);
}

RgbImage read_image(const std::filesystem::path& path, int& maxval_out) {
  const std::string s = load_bytes(path);
  const PnmHeader h = parse_pnm_header(s);
  if (h.magic != "P6") fail(path.string() + ": expected P6");
  RgbImage img(h.width, h.height);
  std::size_t pos = h.payload;
  for (std::size_t i = 0; i < img.n_sites(); ++i) {
    img.r[i] = read_pnm_value(s, pos, h.maxval);
    img.g[i] = read_pnm_value(s, pos, h.maxval);
    img.b[i] = read_pnm_value(s, pos, h.maxval);
  }
  maxval_out = h.maxval;
  return img;
}

void write_image(const RgbImage& img, const std::filesystem::path& path,
                 int maxval) {
  if (maxval != 255 && maxval != 65535) fail("write_image: maxval must be 255 or 65535");
  std::string out = pnm_header_text("P6", img.width, img.height, maxval);
  out.reserve(out.size() + img.n_sites() * 3 * (maxval < 256 ? 1 : 2));
  for (std::size_t i = 0; i < img.n_sites(); ++i) {
    append_pnm_value(out, img.r[i], maxval);
    append_pnm_value(out, img.g[i], maxval);
    append_pnm_value(out, img.b[i], maxval);
  }
  store_bytes(out, path);
}

namespace {

std::vector<std::pair<std::string, std::string>> parse_kv_lines(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return (b == std::string::npos) ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail("expected `key = value`: " + t);
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

}  // namespace

MosaicFrame read_mosaic(const std::filesystem::path& path) {
  const std::string s = load_bytes(path);
  const PnmHeader h = parse_pnm_header(s);
  if (h.magic != "P5") fail(path.string() + ": expected P5");

  const std::filesystem::path meta_path = path.string() + ".meta";
  if (!std::filesystem::exists(meta_path)) {
    fail("missing sidecar " + meta_path.string());
  }
  MosaicFrame frame(h.width, h.height, MosaicLayout::Bayer);
  bool have_pattern = false, have_sigma = false;
  for (const auto& [key, value] : parse_kv_lines(load_bytes(meta_path))) {
    if (key == "pattern") {
      frame.pattern = CfaPattern::from_name(value);
      have_pattern = true;
    } else if (key == "sigma") {
      frame.sigma = std::stod(value);
      have_sigma = true;
    } else if (key == "bit_depth") {
      frame.bit_depth = std::stoi(value);
    } else if (key == "black_level") {
      frame.black_level = std::stod(value);
    } else if (key == "seed") {
      // informational; synthesis provenance only
    } else {
      fail("sidecar: unknown key `" + key + "`");
    }
  }
  if (!have_pattern || !have_sigma) fail("sidecar: pattern and sigma required");

  std::size_t pos = h.payload;
  for (std::size_t i = 0; i < frame.n_sites(); ++i) {
    frame.samples[i] = read_pnm_value(s, pos, h.maxval) - frame.black_level;
  }
  frame.validate();
  return frame;
}

void write_mosaic(const MosaicFrame& frame, const std::filesystem::path& path,
                  std::uint64_t seed) {
  if (frame.layout != MosaicLayout::Bayer) {
    fail("write_mosaic: Bayer frames only");
  }
  const int maxval = (frame.bit_depth <= 8) ? 255 : 65535;
  std::string out = pnm_header_text("P5", frame.width, frame.height, maxval);
  for (std::size_t i = 0; i < frame.n_sites(); ++i) {
    append_pnm_value(out, frame.samples[i] + frame.black_level, maxval);
  }
  store_bytes(out, path);

  std::ostringstream meta;
  meta << "pattern = " << frame.pattern.name() << "\n";
  meta << "sigma = " << format_real(frame.sigma) << "\n";
  meta << "bit_depth = " << frame.bit_depth << "\n";
  meta << "black_level = " << format_real(frame.black_level) << "\n";
  meta << "seed = " << seed << "\n";
  store_bytes(meta.str(), path.string() + ".meta");
}

RegressionTree parse_tree(const std::string& text) {
  std::istringstream is(text);
  std::string tag, version;
  int n_nodes = 0, arity = 0;
  if (!(is >> tag >> version >> n_nodes >> arity) || tag != "dtree" ||
      version != "v1") {
    fail("tree: bad header (want `dtree v1 <n_nodes> <arity>`)");
  }
  if (arity != kAttributeArity) fail("tree: unexpected attribute arity");
  if (n_nodes <= 0) fail("tree: no nodes");
  std::vector<TreeNode> nodes(static_cast<std::size_t>(n_nodes));
  std::vector<bool> seen(static_cast<std::size_t>(n_nodes), false);
  for (int k = 0; k < n_nodes; ++k) {
    std::string kind;
    int id = 0;
    if (!(is >> kind >> id)) fail("tree: truncated node list");
    if (id < 0 || id >= n_nodes) fail("tree: node id out of range");
    if (seen[static_cast<std::size_t>(id)]) fail("tree: duplicate node id");
    seen[static_cast<std::size_t>(id)] = true;
    TreeNode& nd = nodes[static_cast<std::size_t>(id)];
    if (kind == "N") {
      if (!(is >> nd.attr >> nd.threshold >> nd.left >> nd.right)) {
        fail("tree: malformed internal node");
      }
    } else if (kind == "L") {
      if (!(is >> nd.value)) fail("tree: malformed leaf");
      nd.attr = -1;
    } else {
      fail("tree: unknown node kind `" + kind + "`");
    }
  }
  return RegressionTree(std::move(nodes));  // structural validation inside
}

std::string format_tree(const RegressionTree& tree) {
  std::ostringstream os;
  os.precision(17);
  os << "dtree v1 " << tree.nodes().size() << " " << kAttributeArity << "\n";
  for (std::size_t id = 0; id < tree.nodes().size(); ++id) {
    const TreeNode& nd = tree.nodes()[id];
    if (nd.is_leaf()) {
      os << "L " << id << " " << nd.value << "\n";
    } else {
      os << "N " << id << " " << nd.attr << " " << nd.threshold << " "
         << nd.left << " " << nd.right << "\n";
    }
  }
  return os.str();
}

RegressionTree read_tree(const std::filesystem::path& path) {
  return parse_tree(load_bytes(path));
}

void write_tree(const RegressionTree& tree,
                const std::filesystem::path& path) {
  store_bytes(format_tree(tree), path);
}

namespace {

double parse_auto_or_real(const std::string& v) {
  if (v == "auto") return -1.0;
  return std::stod(v);
}

}  // namespace

EmConfig parse_config_text(const std::string& text) {
  EmConfig cfg;
  for (const auto& [key, value] : parse_kv_lines(text)) {
    if (key == "sigma") {
      cfg.sigma = parse_auto_or_real(value);
    } else if (key == "prior.eps0") {
      cfg.prior_eps0 = parse_auto_or_real(value);
    } else if (key == "prior.nu") {
      cfg.prior_nu = std::stod(value);
    } else if (key == "prior.omega_min") {
      cfg.prior_omega_min = parse_auto_or_real(value);
    } else if (key == "prior.std_scale") {
      cfg.prior_std_scale = std::stod(value);
    } else if (key == "beta.beta0") {
      cfg.beta.beta0 = std::stod(value);
    } else if (key == "beta.alpha") {
      cfg.beta.alpha = std::stod(value);
    } else if (key == "beta.R") {
      if (value == "auto") {
        cfg.beta_r_auto = true;
      } else {
        cfg.beta_r_auto = false;
        cfg.beta.R = std::stod(value);
      }
    } else if (key == "beta.radius") {
      cfg.beta.radius = std::stod(value);
    } else if (key == "beta.prune_eps") {
      cfg.beta.prune_eps = std::stod(value);
    } else if (key == "tree") {
      cfg.tree_path = value;
    } else if (key == "constant_d") {
      cfg.constant_d = std::stod(value);
    } else if (key == "max_em_iters") {
      cfg.max_em_iters = std::stoi(value);
    } else if (key == "angle_tol") {
      cfg.angle_tol = std::stod(value);
    } else if (key == "estep") {
      if (value == "quasi-newton") {
        cfg.estep = EstepKind::QuasiNewton;
      } else if (value == "kalman") {
        cfg.estep = EstepKind::Kalman;
      } else if (value == "exact") {
        cfg.estep = EstepKind::Exact;
      } else {
        fail("config: estep must be quasi-newton | kalman | exact");
      }
    } else if (key == "viterbi_levels") {
      cfg.viterbi_levels = std::stoi(value);
    } else if (key == "qn.memory") {
      cfg.qn_memory = std::stoi(value);
    } else if (key == "qn.max_iter") {
      cfg.qn_max_iter = std::stoi(value);
    } else if (key == "qn.grad_tol_rel") {
      cfg.qn_grad_tol_rel = std::stod(value);
    } else if (key == "qn.probe_stride") {
      cfg.qn_probe_stride = std::stoi(value);
    } else if (key == "pad") {
      cfg.pad = std::stoi(value);
    } else if (key == "ar_order") {
      cfg.ar_order = std::stoi(value);
    } else {
      fail("config: unknown key `" + key + "`");
    }
  }
  cfg.validate();
  return cfg;
}

EmConfig read_config(const std::filesystem::path& path) {
  return parse_config_text(load_bytes(path));
}

std::string format_csv(const CsvTable& table) {
  std::ostringstream os;
  auto emit_row = [&os](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i].find(',') != std::string::npos ||
          row[i].find('\n') != std::string::npos) {
        fail("csv: field contains a delimiter");
      }
      if (i) os << ',';
      os << row[i];
    }
    os << '\n';
  };
  emit_row(table.header);
  for (const auto& row : table.rows) emit_row(row);
  return os.str();
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      if (comma == std::string::npos) {
        row.push_back(line.substr(start));
        break;
      }
      row.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(row);
      first = false;
    } else {
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

void write_csv(const CsvTable& table, const std::filesystem::path& path) {
  store_bytes(format_csv(table), path);
}

CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv(load_bytes(path));
}

void write_text_file(const std::string& text,
                     const std::filesystem::path& path) {
  store_bytes(text, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  return load_bytes(path);
}

}  // namespace emdem
