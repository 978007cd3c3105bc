#include "elp/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

namespace elp::io {

namespace {

constexpr char kVcubeMagic[4] = {'V', 'C', 'B', '1'};
constexpr char kCheckpointMagic[4] = {'E', 'L', 'P', 'C'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

void read_exact(std::istream& is, char* dst, std::size_t n, const std::string& source,
                const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw IoError(source + ": truncated file while reading " + what);
}

std::uint32_t get_u32(std::istream& is, const std::string& source, const char* what) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4, source, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is, const std::string& source, const char* what) {
  const std::uint64_t lo = get_u32(is, source, what);
  const std::uint64_t hi = get_u32(is, source, what);
  return lo | (hi << 32);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// VCUBE

void write_vcube(std::ostream& os, const Tensor& t) {
  if (t.empty()) throw ShapeError("write_vcube: empty tensor");
  os.write(kVcubeMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.dims()) {
    if (d > static_cast<Index>(std::numeric_limits<std::uint32_t>::max()))
      throw ShapeError("write_vcube: extent " + std::to_string(d) + " does not fit in 32 bits");
    put_u32(os, static_cast<std::uint32_t>(d));
  }
  for (Index i = 0; i < t.size(); ++i) put_f32(os, static_cast<float>(t[i]));
}

Tensor read_vcube(std::istream& is, const std::string& source) {
  char magic[4];
  read_exact(is, magic, 4, source, "magic");
  if (std::memcmp(magic, kVcubeMagic, 4) != 0) throw IoError(source + ": not a VCUBE file (bad magic)");
  const std::uint32_t rank = get_u32(is, source, "rank");
  if (rank == 0 || rank > 8) throw IoError(source + ": unsupported rank " + std::to_string(rank));
  Dims dims;
  for (std::uint32_t r = 0; r < rank; ++r) {
    const std::uint32_t d = get_u32(is, source, "dims");
    if (d == 0) throw IoError(source + ": zero extent in dims");
    dims.push_back(static_cast<Index>(d));
  }
  const Index n = dims_product(dims);
  std::vector<unsigned char> raw(static_cast<std::size_t>(n) * 4);
  read_exact(is, reinterpret_cast<char*>(raw.data()), raw.size(), source, "payload");
  Tensor t(dims);
  for (Index i = 0; i < n; ++i) {
    const unsigned char* b = raw.data() + 4 * i;
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) |
                            (static_cast<std::uint32_t>(b[3]) << 24);
    t[i] = static_cast<double>(std::bit_cast<float>(u));
  }
  return t;
}

void write_vcube(const fs::path& path, const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_vcube(os, t);
  atomic_write(path, os.str());
}

Tensor read_vcube(const fs::path& path) {
  const std::string bytes = slurp(path);
  std::istringstream is(bytes, std::ios::binary);
  Tensor t = read_vcube(is, path.string());
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError(path.string() + ": trailing bytes after VCUBE payload");
  return t;
}

void atomic_write(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError(path.string() + ": write failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(path.string() + ": cannot rename temporary file into place");
  }
}

std::uint8_t pgm_level(double value) {
  const double c = std::clamp(std::isnan(value) ? 0.0 : value, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

void write_pgm(const fs::path& path, const Tensor& plane) {
  Index H = 0, W = 0;
  if (plane.rank() == 2) {
    H = plane.dim(0);
    W = plane.dim(1);
  } else if (plane.rank() == 3 && plane.dim(0) == 1) {
    H = plane.dim(1);
    W = plane.dim(2);
  } else {
    throw ShapeError("write_pgm expects one frame, got " + dims_string(plane.dims()));
  }
  std::string bytes = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (Index i = 0; i < plane.size(); ++i) bytes.push_back(static_cast<char>(pgm_level(plane[i])));
  atomic_write(path, bytes);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// "ELPC", u32 version, u32 m, u32 n, u32 B_max, u32 convs, u32 kernel,
// u32 scale count, widths, u64 seed, u64 step, u32 record count, then per
// record: u32 name length, name bytes, a VCUBE record.

ElpNetwork empty_network(const CheckpointInfo& info) {
  ElpNetwork net;
  net.schedule = StageSchedule::constant(info.single_stages, info.ensemble_stages, 1.0, 1.0);
  for (Index i = 1; i <= net.schedule.stages(); ++i)
    net.priors.push_back(CnnPrior::zeros(info.cnn, i == 1, "stage" + std::to_string(i)));
  return net;
}

void save_checkpoint(const fs::path& path, ElpNetwork& network, std::uint64_t seed,
                     std::int64_t step) {
  network.validate();
  if (network.priors.empty()) throw ContractError("save_checkpoint: network has no stages");
  const CnnConfig& cnn = network.priors.front().config();
  std::ostringstream os(std::ios::binary);
  os.write(kCheckpointMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(network.schedule.single_stages));
  put_u32(os, static_cast<std::uint32_t>(network.schedule.ensemble_stages));
  put_u32(os, static_cast<std::uint32_t>(cnn.frames));
  put_u32(os, static_cast<std::uint32_t>(cnn.convs_per_scale));
  put_u32(os, static_cast<std::uint32_t>(cnn.kernel));
  put_u32(os, static_cast<std::uint32_t>(cnn.widths.size()));
  for (Index w : cnn.widths) put_u32(os, static_cast<std::uint32_t>(w));
  put_u64(os, seed);
  put_u64(os, static_cast<std::uint64_t>(step));
  const auto params = network.parameters();
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_vcube(os, p->value);
  }
  atomic_write(path, os.str());
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string source = path.string();
  const std::string bytes = slurp(path);
  std::istringstream is(bytes, std::ios::binary);
  char magic[4];
  read_exact(is, magic, 4, source, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError(source + ": not a checkpoint (bad magic)");

  Checkpoint ck;
  CheckpointInfo& info = ck.info;
  info.version = get_u32(is, source, "version");
  if (info.version != kCheckpointVersion)
    throw IoError(source + ": unsupported checkpoint version " + std::to_string(info.version));
  info.single_stages = get_u32(is, source, "schedule");
  info.ensemble_stages = get_u32(is, source, "schedule");
  info.cnn.frames = get_u32(is, source, "schedule");
  info.cnn.convs_per_scale = get_u32(is, source, "schedule");
  info.cnn.kernel = get_u32(is, source, "schedule");
  const std::uint32_t scales = get_u32(is, source, "schedule");
  if (scales == 0 || scales > 16) throw IoError(source + ": implausible scale count");
  info.cnn.widths.clear();
  for (std::uint32_t j = 0; j < scales; ++j) info.cnn.widths.push_back(get_u32(is, source, "widths"));
  info.seed = get_u64(is, source, "seed");
  info.step = static_cast<std::int64_t>(get_u64(is, source, "step"));

  try {
    ck.network = empty_network(info);
  } catch (const std::exception& e) {
    throw IoError(source + ": invalid schedule descriptor: " + e.what());
  }
  std::map<std::string, ad::Parameter*> by_name;
  for (auto* p : ck.network.parameters()) by_name[p->name] = p;

  const std::uint32_t count = get_u32(is, source, "record count");
  if (count != by_name.size())
    throw ShapeError(source + ": " + std::to_string(count) + " parameter records, the schedule needs " +
                     std::to_string(by_name.size()));
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t len = get_u32(is, source, "record name");
    if (len > 4096) throw IoError(source + ": implausible record name length");
    std::string name(len, '\0');
    read_exact(is, name.data(), len, source, "record name");
    Tensor value = read_vcube(is, source + " [" + name + "]");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError(source + ": unexpected parameter '" + name + "'");
    if (it->second->value.dims() != value.dims())
      throw ShapeError(source + ": parameter '" + name + "' has dims " + dims_string(value.dims()) +
                       ", the schedule expects " + dims_string(it->second->value.dims()));
    it->second->value = std::move(value);
    by_name.erase(it);
  }
  if (!by_name.empty()) throw ShapeError(source + ": missing parameter '" + by_name.begin()->first + "'");
  if (is.peek() != std::char_traits<char>::eof()) throw IoError(source + ": trailing bytes");
  return ck;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Index to_index(const ConfigEntry& e, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing");
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw ParseError(key + ": expected an integer, got '" + e.value + "'", e.line);
  }
}

double to_double(const ConfigEntry& e, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(e.value, &pos);
    if (pos != e.value.size() || !std::isfinite(v)) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(key + ": expected a number, got '" + e.value + "'", e.line);
  }
}

bool to_bool(const ConfigEntry& e, const std::string& key) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw ParseError(key + ": expected true or false, got '" + e.value + "'", e.line);
}

std::vector<Index> to_list(const ConfigEntry& e, const std::string& key) {
  std::vector<Index> out;
  std::stringstream ss(e.value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_index({trim(item), e.line}, key));
  if (out.empty()) throw ParseError(key + ": expected a comma-separated list", e.line);
  return out;
}

}  // namespace

ConfigMap parse_config(std::istream& is) {
  ConfigMap out;
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value', got '" + text + "'", line);
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key.empty()) throw ParseError("missing key before '='", line);
    if (value.empty()) throw ParseError(key + ": missing value", line);
    if (out.count(key)) throw ParseError(key + ": duplicate key (first set on line " +
                                             std::to_string(out[key].line) + ")", line);
    out[key] = {value, line};
  }
  return out;
}

ConfigMap read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open config");
  return parse_config(in);
}

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"batch_size", "samples per optimizer step"},
      {"epochs_period1", "epochs of single-prior pretraining"},
      {"epochs_period2", "epochs of end-to-end training with ensemble stages"},
      {"steps_per_epoch", "optimizer steps per epoch"},
      {"lr_period1", "initial learning rate, period 1"},
      {"lr_period2", "initial learning rate, period 2 (must be smaller)"},
      {"lr_decay", "learning-rate decay factor"},
      {"decay_interval", "epochs between decays"},
      {"warmup_epochs", "epochs before the first decay"},
      {"single_stages", "m, single-prior stages"},
      {"ensemble_stages", "n, ensemble stages added in period 2"},
      {"frames", "B_max, frames the priors are built for"},
      {"widths", "comma-separated U-net widths, finest first"},
      {"convs_per_scale", "convolutions per U-net scale (>= 2)"},
      {"kernel", "convolution kernel size (odd)"},
      {"init_gamma1", "initial gamma1 for every stage"},
      {"init_gamma2", "initial gamma2 for every stage"},
      {"added_gamma2_scale", "period-2 stages start at stage m's gamma2 times this"},
      {"rows", "training crop height"},
      {"cols", "training crop width"},
      {"frame_counts", "comma-separated frame counts drawn per batch"},
      {"noise_sigma_min", "lowest measurement noise sigma"},
      {"noise_sigma_max", "highest measurement noise sigma"},
      {"fresh_masks", "true: new random masks per sample"},
      {"validation_size", "fixed validation samples"},
      {"seed", "master seed"},
      {"threads", "batch worker threads (ELP_THREADS caps it)"},
      {"corpus_size", "synthetic scenes generated for --synth"},
  };
  return keys;
}

TrainSettings train_settings(const ConfigMap& config) {
  TrainSettings s;
  TrainConfig& c = s.train;
  int last_line = 0;
  for (const auto& [key, e] : config) {
    last_line = std::max(last_line, e.line);
    if (key == "batch_size") c.batch_size = to_index(e, key);
    else if (key == "epochs_period1") c.epochs_period1 = to_index(e, key);
    else if (key == "epochs_period2") c.epochs_period2 = to_index(e, key);
    else if (key == "steps_per_epoch") c.steps_per_epoch = to_index(e, key);
    else if (key == "lr_period1") c.lr_period1 = to_double(e, key);
    else if (key == "lr_period2") c.lr_period2 = to_double(e, key);
    else if (key == "lr_decay") c.lr_decay = to_double(e, key);
    else if (key == "decay_interval") c.decay_interval = to_index(e, key);
    else if (key == "warmup_epochs") c.warmup_epochs = to_index(e, key);
    else if (key == "single_stages") c.single_stages = to_index(e, key);
    else if (key == "ensemble_stages") c.ensemble_stages = to_index(e, key);
    else if (key == "frames") c.cnn.frames = to_index(e, key);
    else if (key == "widths") c.cnn.widths = to_list(e, key);
    else if (key == "convs_per_scale") c.cnn.convs_per_scale = to_index(e, key);
    else if (key == "kernel") c.cnn.kernel = to_index(e, key);
    else if (key == "init_gamma1") c.init_gamma1 = to_double(e, key);
    else if (key == "init_gamma2") c.init_gamma2 = to_double(e, key);
    else if (key == "added_gamma2_scale") c.added_gamma2_scale = to_double(e, key);
    else if (key == "rows") c.rows = to_index(e, key);
    else if (key == "cols") c.cols = to_index(e, key);
    else if (key == "frame_counts") c.frame_counts = to_list(e, key);
    else if (key == "noise_sigma_min") c.noise_sigma_min = to_double(e, key);
    else if (key == "noise_sigma_max") c.noise_sigma_max = to_double(e, key);
    else if (key == "fresh_masks") c.fresh_masks = to_bool(e, key);
    else if (key == "validation_size") c.validation_size = to_index(e, key);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_index(e, key));
    else if (key == "threads") c.threads = static_cast<int>(to_index(e, key));
    else if (key == "corpus_size") s.corpus_size = to_index(e, key);
    else throw ParseError("unknown key '" + key + "'", e.line);
  }
  if (!config.count("frame_counts")) c.frame_counts = default_frame_counts(c.cnn.frames);
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw ParseError(e.what(), last_line);
  }
  if (s.corpus_size < 1) throw ParseError("corpus_size must be >= 1", config.at("corpus_size").line);
  return s;
}

}  // namespace elp::io
