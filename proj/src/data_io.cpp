#include "nmfnet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nmfnet/rng.hpp"

namespace nmfnet {

namespace {
constexpr std::size_t kRecordBytes = 3073;
constexpr std::size_t kTrainFileBytes = 30730000;  // 10000 records

std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff n = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(buf.data()), n);
  if (!f) throw std::runtime_error("short read from " + path);
  return buf;
}
}  // namespace

Dataset read_cifar_batch(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_all(path);
  if (buf.size() % kRecordBytes != 0)
    throw std::runtime_error(path + ": size " + std::to_string(buf.size()) +
                             " is not a multiple of " + std::to_string(kRecordBytes));
  const std::size_t n = buf.size() / kRecordBytes;
  Dataset ds;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = buf.data() + r * kRecordBytes;
    if (rec[0] > 9)
      throw std::runtime_error(path + ": label byte " + std::to_string(int(rec[0])) +
                               " out of range at offset " + std::to_string(r * kRecordBytes));
    ds.labels[r] = rec[0];
    double* img = ds.images.data() + r * 3072;
    for (std::size_t k = 0; k < 3072; ++k) img[k] = rec[1 + k] / 255.0;
  }
  return ds;
}

void write_cifar_batch(const std::string& path, const Dataset& ds) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  const std::size_t n = ds.size();
  std::vector<std::uint8_t> rec(kRecordBytes);
  for (std::size_t r = 0; r < n; ++r) {
    rec[0] = static_cast<std::uint8_t>(ds.labels[r]);
    const double* img = ds.images.data() + r * 3072;
    for (std::size_t k = 0; k < 3072; ++k)
      rec[1 + k] = static_cast<std::uint8_t>(std::lround(std::clamp(img[k], 0.0, 1.0) * 255.0));
    f.write(reinterpret_cast<const char*>(rec.data()), kRecordBytes);
  }
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  Dataset train;
  train.images = Tensor({50000, 3, 32, 32});
  train.labels.reserve(50000);
  train.split = "train";
  std::size_t off = 0;
  for (int i = 1; i <= 5; ++i) {
    const std::string path = dir + "/data_batch_" + std::to_string(i) + ".bin";
    {
      std::ifstream f(path, std::ios::binary);
      if (!f) throw std::runtime_error("cannot open " + path);
      f.seekg(0, std::ios::end);
      if (static_cast<std::size_t>(f.tellg()) != kTrainFileBytes)
        throw std::runtime_error(path + ": expected " + std::to_string(kTrainFileBytes) +
                                 " bytes, got " + std::to_string(f.tellg()));
    }
    Dataset b = read_cifar_batch(path);
    std::memcpy(train.images.data() + off * 3072, b.images.data(),
                b.images.size() * sizeof(double));
    train.labels.insert(train.labels.end(), b.labels.begin(), b.labels.end());
    off += b.size();
  }
  Dataset test = read_cifar_batch(dir + "/test_batch.bin");
  test.split = "test";
  if (test.size() != 10000)
    throw std::runtime_error("test_batch.bin: expected 10000 records, got " +
                             std::to_string(test.size()));
  return {std::move(train), std::move(test)};
}

Dataset subset_per_class(const Dataset& ds, std::size_t per_class) {
  std::vector<std::size_t> picked;
  std::vector<std::size_t> counts(10, 0);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const int c = ds.labels[r];
    if (counts[c] < per_class) {
      picked.push_back(r);
      ++counts[c];
    }
  }
  Dataset out;
  out.split = ds.split;
  out.images = Tensor({picked.size(), 3, 32, 32});
  out.labels.resize(picked.size());
  for (std::size_t k = 0; k < picked.size(); ++k) {
    std::memcpy(out.images.data() + k * 3072, ds.images.data() + picked[k] * 3072,
                3072 * sizeof(double));
    out.labels[k] = ds.labels[picked[k]];
  }
  return out;
}

Dataset synthetic_cifar(std::size_t n, std::uint64_t seed, const std::string& split) {
  // per-class orientation + base color; two spatial frequencies
  static const double palette[10][3] = {
      {0.9, 0.2, 0.2}, {0.2, 0.9, 0.2}, {0.2, 0.3, 0.9}, {0.9, 0.9, 0.2}, {0.9, 0.3, 0.9},
      {0.2, 0.9, 0.9}, {0.9, 0.6, 0.2}, {0.5, 0.3, 0.8}, {0.6, 0.8, 0.4}, {0.7, 0.7, 0.7}};
  Rng rng(derive_seed(seed, split == "train" ? 11 : 12));
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
  std::normal_distribution<double> noise(0.0, 0.06);
  Dataset ds;
  ds.split = split;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int cls = static_cast<int>(r % 10);
    ds.labels[r] = cls;
    const double theta = cls * M_PI / 10.0;
    const double freq = (cls % 2 == 0) ? 3.0 : 5.0;
    const double phase = uphase(rng);
    const double cx = std::cos(theta), sx = std::sin(theta);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const double t = 2.0 * M_PI * freq * (cx * x + sx * y) / 32.0 + phase;
          const double pat = 0.55 + 0.35 * std::sin(t);
          double v = palette[cls][c] * pat + noise(rng);
          ds.images.at(r, c, y, x) = std::clamp(v, 0.0, 1.0);
        }
  }
  return ds;
}

Tensor read_csv_matrix(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(cell, &pos));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;  // header line
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-numeric cell");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty matrix");
  Tensor m({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j];
  return m;
}

void write_csv_matrix(const std::string& path, const Tensor& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(17);
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) f << (j ? "," : "") << m.at(i, j);
    f << "\n";
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, std::size_t lineno) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config line " + std::to_string(lineno) + ": bad boolean '" + v + "'");
}

[[noreturn]] void bad_key(const std::string& key, std::size_t lineno) {
  throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
}

}  // namespace

std::pair<NetworkConfig, TrainConfig> parse_config(const std::string& text) {
  std::string preset = "cnmf_mix";
  std::size_t width = 1, groups = 1, nmf_iters = 75;
  GradMode grad_mode = GradMode::kDirect;
  TrainConfig tc;
  struct Override {
    std::size_t block;
    std::string key, value;
    std::size_t lineno;
  };
  std::vector<Override> overrides;

  std::istringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  std::string section;  // "", "train", or "blockN"
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "train" &&
          !(section.rfind("block", 0) == 0 && section.size() == 6 && isdigit(section[5])))
        throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown section [" +
                                 section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (section.empty()) {
        if (key == "preset") preset = value;
        else if (key == "width") width = std::stoul(value);
        else if (key == "groups") groups = std::stoul(value);
        else if (key == "nmf_iters") nmf_iters = std::stoul(value);
        else if (key == "grad_mode") grad_mode = parse_grad_mode(value);
        else bad_key(key, lineno);
      } else if (section == "train") {
        if (key == "lr0") tc.lr0 = std::stod(value);
        else if (key == "plateau_patience") tc.plateau_patience = std::stoul(value);
        else if (key == "lr_factor") tc.lr_factor = std::stod(value);
        else if (key == "lr_floor") tc.lr_floor = std::stod(value);
        else if (key == "max_epochs") tc.max_epochs = std::stoul(value);
        else if (key == "batch_size") tc.batch_size = std::stoul(value);
        else if (key == "seed") tc.seed = std::stoull(value);
        else if (key == "hflip") tc.hflip = parse_bool(value, lineno);
        else if (key == "jitter_brightness") tc.jitter_brightness = std::stod(value);
        else if (key == "jitter_contrast") tc.jitter_contrast = std::stod(value);
        else if (key == "jitter_saturation") tc.jitter_saturation = std::stod(value);
        else if (key == "crop_32_to_28") tc.crop_32_to_28 = parse_bool(value, lineno);
        else if (key == "alpha") tc.alpha = std::stod(value);
        else if (key == "val_fraction") tc.val_fraction = std::stod(value);
        else bad_key(key, lineno);
      } else {
        const std::size_t bi = section[5] - '0';
        if (bi > 3) throw std::runtime_error("config line " + std::to_string(lineno) +
                                             ": block index out of range");
        overrides.push_back({bi, key, value, lineno});
      }
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": bad value '" + value +
                               "' for key '" + key + "'");
    }
  }
  if (tc.lr_factor <= 0.0 || tc.lr_factor >= 1.0)
    throw std::runtime_error("config: lr_factor must be in (0,1)");
  if (tc.lr_floor >= tc.lr0) throw std::runtime_error("config: lr_floor must be below lr0");

  NetworkConfig nc = preset_config(preset, width, groups, nmf_iters);
  nc.grad_mode = grad_mode;
  for (const Override& o : overrides) {
    BlockConfig& bc = nc.blocks[o.block];
    try {
      if (o.key == "kind") {
        if (o.value == "cnn") bc.kind = BlockKind::kCnn;
        else if (o.value == "cnmf") bc.kind = BlockKind::kCnmf;
        else throw std::runtime_error("config line " + std::to_string(o.lineno) +
                                      ": bad kind '" + o.value + "'");
      } else if (o.key == "mix_1x1") bc.mix_1x1 = parse_bool(o.value, o.lineno);
      else if (o.key == "out_channels") bc.out_channels = std::stoul(o.value);
      else if (o.key == "kernel_h") bc.kernel_h = std::stoul(o.value);
      else if (o.key == "kernel_w") bc.kernel_w = std::stoul(o.value);
      else if (o.key == "stride") bc.stride = std::stoul(o.value);
      else if (o.key == "padding") bc.padding = std::stoul(o.value);
      else if (o.key == "groups_main") bc.groups_main = std::stoul(o.value);
      else if (o.key == "groups_mix") bc.groups_mix = std::stoul(o.value);
      else if (o.key == "batch_norm") bc.batch_norm = parse_bool(o.value, o.lineno);
      else if (o.key == "relu") bc.relu = parse_bool(o.value, o.lineno);
      else if (o.key == "nmf_iters") bc.nmf_iters = std::stoul(o.value);
      else if (o.key == "nmf_epsilon") bc.nmf_epsilon = std::stod(o.value);
      else bad_key(o.key, o.lineno);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config line " + std::to_string(o.lineno) + ": bad value '" +
                               o.value + "' for key '" + o.key + "'");
    }
  }
  return {std::move(nc), tc};
}

std::pair<NetworkConfig, TrainConfig> parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const NetworkConfig& net, const TrainConfig& train) {
  std::ostringstream out;
  out.precision(17);
  out << "grad_mode = " << (net.grad_mode == GradMode::kDirect ? "direct" : "chain") << "\n";
  out << "width = " << net.width_multiplier << "\n";
  for (std::size_t b = 0; b < net.blocks.size(); ++b) {
    const BlockConfig& bc = net.blocks[b];
    out << "[block" << b << "]\n";
    out << "kind = " << (bc.kind == BlockKind::kCnn ? "cnn" : "cnmf") << "\n";
    out << "mix_1x1 = " << (bc.mix_1x1 ? "true" : "false") << "\n";
    out << "out_channels = " << bc.out_channels << "\n";
    out << "kernel_h = " << bc.kernel_h << "\n";
    out << "kernel_w = " << bc.kernel_w << "\n";
    out << "stride = " << bc.stride << "\n";
    out << "padding = " << bc.padding << "\n";
    out << "groups_main = " << bc.groups_main << "\n";
    out << "groups_mix = " << bc.groups_mix << "\n";
    out << "batch_norm = " << (bc.batch_norm ? "true" : "false") << "\n";
    out << "relu = " << (bc.relu ? "true" : "false") << "\n";
    out << "nmf_iters = " << bc.nmf_iters << "\n";
    out << "nmf_epsilon = " << bc.nmf_epsilon << "\n";
  }
  out << "[train]\n";
  out << "lr0 = " << train.lr0 << "\n";
  out << "plateau_patience = " << train.plateau_patience << "\n";
  out << "lr_factor = " << train.lr_factor << "\n";
  out << "lr_floor = " << train.lr_floor << "\n";
  out << "max_epochs = " << train.max_epochs << "\n";
  out << "batch_size = " << train.batch_size << "\n";
  out << "seed = " << train.seed << "\n";
  out << "hflip = " << (train.hflip ? "true" : "false") << "\n";
  out << "jitter_brightness = " << train.jitter_brightness << "\n";
  out << "jitter_contrast = " << train.jitter_contrast << "\n";
  out << "jitter_saturation = " << train.jitter_saturation << "\n";
  out << "crop_32_to_28 = " << (train.crop_32_to_28 ? "true" : "false") << "\n";
  out << "alpha = " << train.alpha << "\n";
  out << "val_fraction = " << train.val_fraction << "\n";
  return out.str();
}

namespace {

constexpr char kMagic[4] = {'N', 'M', 'F', 'C'};
constexpr std::uint8_t kVersion = 1;

void write_u32(std::ostream& f, std::uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); }
void write_u64(std::ostream& f, std::uint64_t v) { f.write(reinterpret_cast<char*>(&v), 8); }
std::uint32_t read_u32(std::istream& f) {
  std::uint32_t v;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::istream& f) {
  std::uint64_t v;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_tensor(std::ostream& f, const std::string& name, const Tensor& t) {
  write_u32(f, static_cast<std::uint32_t>(name.size()));
  f.write(name.data(), name.size());
  write_u32(f, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u64(f, d);
  f.write(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

// Tensor names -> storage, covering parameters and BN running stats.
std::vector<std::pair<std::string, Tensor*>> checkpoint_tensors(Model& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (ParamRef& p : m.parameters()) out.emplace_back(p.name, p.value);
  for (std::size_t b = 0; b < m.blocks().size(); ++b) {
    Block& blk = m.blocks()[b];
    if (blk.bn) {
      out.emplace_back("block" + std::to_string(b) + ".bn.running_mean", &blk.bn->running_mean);
      out.emplace_back("block" + std::to_string(b) + ".bn.running_var", &blk.bn->running_var);
    }
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& train) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(kMagic, 4);
  f.put(static_cast<char>(kVersion));
  const std::string cfg = serialize_config(model.config(), train);
  write_u32(f, static_cast<std::uint32_t>(cfg.size()));
  f.write(cfg.data(), cfg.size());
  Model& m = const_cast<Model&>(model);  // tensor list is read-only here
  auto tensors = checkpoint_tensors(m);
  write_u32(f, static_cast<std::uint32_t>(tensors.size()));
  for (auto& [name, t] : tensors) write_tensor(f, name, *t);
  if (!f) throw std::runtime_error("write failed for " + path);
}

std::pair<Model, TrainConfig> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  const int ver = f.get();
  if (ver != kVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(ver));
  std::string cfg(read_u32(f), '\0');
  f.read(cfg.data(), cfg.size());
  auto [net, train] = parse_config(cfg);
  Model m = build(net, 0);
  auto tensors = checkpoint_tensors(m);
  const std::uint32_t n = read_u32(f);
  if (n != tensors.size())
    throw std::runtime_error(path + ": tensor count disagrees with config");
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name(read_u32(f), '\0');
    f.read(name.data(), name.size());
    if (name != tensors[k].first)
      throw std::runtime_error(path + ": unexpected tensor '" + name + "'");
    const std::uint32_t rank = read_u32(f);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = read_u64(f);
    Tensor* dst = tensors[k].second;
    if (shape != dst->shape())
      throw std::runtime_error(path + ": shape mismatch for tensor '" + name + "'");
    f.read(reinterpret_cast<char*>(dst->data()), dst->size() * sizeof(double));
  }
  if (!f) throw std::runtime_error(path + ": truncated checkpoint");
  return {std::move(m), train};
}

}  // namespace nmfnet
