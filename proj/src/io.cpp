#include "tibp/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "tibp/error.hpp"
#include "tibp/sampler.hpp"

namespace tibp {

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    fail(ErrorKind::usage, "not a number: '" + s + "'");
  }
  return v;
}

long long parse_integer(const std::string& raw) {
  const std::string s = trim(raw);
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    fail(ErrorKind::usage, "not an integer: '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

// ---- PNM ----

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const fs::path& path) {
  PnmHeader h;
  std::size_t pos = 0;
  auto bad = [&](const std::string& why) { fail(ErrorKind::data, path.string() + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) bad("truncated header");
    return bytes.substr(start, pos - start);
  };
  h.magic = token();
  if (h.magic != "P5" && h.magic != "P6") bad("not a binary PGM/PPM file");
  try {
    h.width = static_cast<int>(parse_integer(token()));
    h.height = static_cast<int>(parse_integer(token()));
    h.maxval = static_cast<int>(parse_integer(token()));
  } catch (const Error&) {
    bad("malformed header");
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) bad("bad dimensions");
  if (pos >= bytes.size()) bad("truncated header");
  h.data_offset = pos + 1;  // single whitespace byte after maxval
  return h;
}

}  // namespace

Image read_pnm(const fs::path& path) {
  const std::string bytes = read_file(path);
  const PnmHeader h = parse_pnm_header(bytes, path);
  const int C = h.magic == "P6" ? 3 : 1;
  const int bps = h.maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * C * bps;
  if (bytes.size() - h.data_offset < need) fail(ErrorKind::data, path.string() + ": truncated pixel data");
  Image img(h.height, h.width, C);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < C; ++c) {
        unsigned v = *p++;
        if (bps == 2) v = (v << 8) | *p++;
        img.at(y, x, c) = static_cast<double>(v) / h.maxval;
      }
    }
  }
  return img;
}

void write_pnm(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorKind::dimension, "PNM output needs 1 or 3 channels");
  }
  std::ostringstream out;
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  write_file_atomic(path, out.str());
}

Image box_resize(const Image& image, int height, int width) {
  if (height <= 0 || width <= 0 || image.height % height != 0 || image.width % width != 0) {
    fail(ErrorKind::dimension, "box resize needs integer downscale factors");
  }
  const int fy = image.height / height, fx = image.width / width;
  Image out(height, width, image.channels);
  const double inv = 1.0 / (fy * fx);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double s = 0.0;
        for (int i = 0; i < fy; ++i) {
          for (int j = 0; j < fx; ++j) s += image.at(y * fy + i, x * fx + j, c);
        }
        out.at(y, x, c) = s * inv;
      }
    }
  }
  return out;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::data, dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return files;
}

Dataset load_image_directory(const fs::path& dir, const LoadOptions& options) {
  const auto files = list_images(dir);
  if (files.empty()) fail(ErrorKind::data, dir.string() + " contains no PGM/PPM images");
  Dataset raw;
  for (const auto& f : files) {
    Image img = read_pnm(f);
    if (options.resize_h > 0 || options.resize_w > 0) {
      img = box_resize(img, options.resize_h > 0 ? options.resize_h : img.height,
                       options.resize_w > 0 ? options.resize_w : img.width);
    }
    if (!raw.images.empty() && !img.same_shape(raw.images.front())) {
      fail(ErrorKind::data, f.string() + " differs in size or channels from " + files.front().string());
    }
    raw.images.push_back(std::move(img));
  }
  const int C = raw.channels();
  raw.channel_mean.assign(C, 0.0);
  raw.channel_stddev.assign(C, 1.0);
  return options.normalize ? normalize_dataset(raw) : raw;
}

void write_image_directory(const fs::path& dir, const Dataset& raw) {
  fs::create_directories(dir);
  for (int n = 0; n < raw.size(); ++n) {
    std::ostringstream name;
    name << "image_" << std::setw(4) << std::setfill('0') << n
         << (raw.images[n].channels == 3 ? ".ppm" : ".pgm");
    write_pnm(dir / name.str(), raw.images[n]);
  }
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::data, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) fail(ErrorKind::data, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    fail(ErrorKind::data, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

// ---- truth manifest ----

namespace {

std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_truth_manifest(const fs::path& path, const GroundTruth& truth) {
  std::ostringstream out;
  const auto& sp = truth.space;
  out << "tibp-truth 1\n";
  out << "mode " << to_string(truth.mode) << "\n";
  out << "noise " << format_real(truth.noise) << "\n";
  out << "image " << sp.image_height() << ' ' << sp.image_width() << "\n";
  out << "canvas " << sp.canvas_height() << ' ' << sp.canvas_width() << "\n";
  out << "translations " << (sp.translations() ? 1 : 0) << "\n";
  out << "rotations";
  for (double r : sp.rotations()) out << ' ' << format_real(r);
  out << "\nscales";
  for (double s : sp.scales()) out << ' ' << format_real(s);
  out << "\nfeatures " << truth.num_features() << "\n";
  for (int k = 0; k < truth.num_features(); ++k) {
    const Glyph& g = truth.features[k];
    out << "feature " << g.name << ' ' << g.canvas.height << ' ' << g.canvas.width << ' '
        << g.canvas.channels << " rank " << truth.rank[k] << " color";
    for (double c : g.color) out << ' ' << format_real(c);
    out << "\nstencil ";
    for (int y = 0; y < g.stencil.height; ++y) {
      if (y) out << '/';
      for (int x = 0; x < g.stencil.width; ++x) out << (g.stencil[y * g.stencil.width + x] ? '1' : '0');
    }
    out << "\nvalues";
    for (double v : g.canvas.values) out << ' ' << format_real(v);
    out << "\n";
  }
  out << "images " << truth.num_images() << "\n";
  for (int n = 0; n < truth.num_images(); ++n) {
    out << "image_row " << n;
    for (int k = 0; k < truth.num_features(); ++k) {
      const auto& t = truth.transforms[n][k];
      out << ' ' << int(truth.z[n][k]) << ':' << t.dx << ':' << t.dy << ':' << t.rotation << ':' << t.scale;
    }
    out << "\n";
  }
  write_file_atomic(path, out.str());
}

GroundTruth read_truth_manifest(const fs::path& path) {
  std::istringstream in(read_file(path));
  auto bad = [&](const std::string& why) -> void {
    fail(ErrorKind::data, path.string() + ": " + why);
  };
  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(in >> k) || k != key) bad("expected '" + key + "'");
  };
  auto read_rest = [&]() {
    std::string line;
    std::getline(in, line);
    return line;
  };
  GroundTruth truth;
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "tibp-truth" || version != 1) bad("not a truth manifest");
  std::string mode;
  expect("mode");
  in >> mode;
  truth.mode = parse_composition(mode);
  expect("noise");
  in >> truth.noise;
  int H = 0, W = 0, Fh = 0, Fw = 0;
  expect("image");
  in >> H >> W;
  expect("canvas");
  in >> Fh >> Fw;
  int translations = 1;
  expect("translations");
  in >> translations;
  std::vector<double> rotations, scales;
  expect("rotations");
  for (const auto& tok : split(trim(read_rest()), ' ')) {
    if (!tok.empty()) rotations.push_back(parse_real(tok));
  }
  expect("scales");
  for (const auto& tok : split(trim(read_rest()), ' ')) {
    if (!tok.empty()) scales.push_back(parse_real(tok));
  }
  if (!in) bad("malformed header");
  truth.space = TransformationSpace(H, W, Fh, Fw, rotations, scales, translations != 0);
  int K = 0;
  expect("features");
  in >> K;
  if (!in || K < 0) bad("bad feature count");
  for (int k = 0; k < K; ++k) {
    Glyph g;
    int h = 0, w = 0, c = 0, rank = 0;
    expect("feature");
    in >> g.name >> h >> w >> c;
    expect("rank");
    in >> rank;
    expect("color");
    in >> g.color[0] >> g.color[1] >> g.color[2];
    if (!in || h <= 0 || w <= 0 || c <= 0) bad("bad feature header");
    expect("stencil");
    std::string st;
    in >> st;
    g.stencil = BitGrid(h, w);
    const auto rows = split(st, '/');
    if (static_cast<int>(rows.size()) != h) bad("stencil has wrong height");
    for (int y = 0; y < h; ++y) {
      if (static_cast<int>(rows[y].size()) != w) bad("stencil has wrong width");
      for (int x = 0; x < w; ++x) g.stencil[y * w + x] = rows[y][x] == '1';
    }
    expect("values");
    g.canvas = FeatureCanvas(h, w, c);
    for (double& v : g.canvas.values) in >> v;
    if (!in) bad("truncated feature values");
    truth.features.push_back(std::move(g));
    truth.rank.push_back(rank);
  }
  int N = 0;
  expect("images");
  in >> N;
  if (!in || N < 0) bad("bad image count");
  truth.z.assign(N, std::vector<std::uint8_t>(K, 0));
  truth.transforms.assign(N, std::vector<Transformation>(K));
  for (int n = 0; n < N; ++n) {
    int idx = -1;
    expect("image_row");
    in >> idx;
    if (idx != n) bad("image rows out of order");
    for (int k = 0; k < K; ++k) {
      std::string tok;
      in >> tok;
      const auto parts = split(tok, ':');
      if (parts.size() != 5) bad("bad image entry '" + tok + "'");
      truth.z[n][k] = static_cast<std::uint8_t>(parse_integer(parts[0]));
      auto& t = truth.transforms[n][k];
      t.dx = static_cast<int>(parse_integer(parts[1]));
      t.dy = static_cast<int>(parse_integer(parts[2]));
      t.rotation = static_cast<int>(parse_integer(parts[3]));
      t.scale = static_cast<int>(parse_integer(parts[4]));
    }
  }
  return truth;
}

// ---- checkpoint ----

namespace {

enum class DType : std::uint8_t { f64 = 0, i64 = 1 };

struct Array {
  DType type = DType::f64;
  std::vector<std::uint64_t> dims;
  std::vector<double> f;
  std::vector<std::int64_t> i;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) u8(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) u8(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void raw(const std::string& s) { buf_ += s; }

  void array(const std::string& name, const Array& a) {
    u32(static_cast<std::uint32_t>(name.size()));
    raw(name);
    u8(static_cast<std::uint8_t>(a.type));
    u32(static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) u64(d);
    if (a.type == DType::f64) {
      for (double v : a.f) u64(std::bit_cast<std::uint64_t>(v));
    } else {
      for (auto v : a.i) u64(static_cast<std::uint64_t>(v));
    }
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t(static_cast<std::uint8_t>(b_[pos_++])) << (8 * b);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t(static_cast<std::uint8_t>(b_[pos_++])) << (8 * b);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Array array() {
    Array a;
    const auto t = u8();
    if (t > 1) fail(ErrorKind::format, "checkpoint: unknown array type");
    a.type = static_cast<DType>(t);
    const auto rank = u32();
    if (rank > 8) fail(ErrorKind::format, "checkpoint: implausible array rank");
    for (std::uint32_t r = 0; r < rank; ++r) a.dims.push_back(u64());
    const std::size_t n = a.count();
    if (n > (b_.size() - pos_) / 8) fail(ErrorKind::format, "checkpoint truncated");
    if (a.type == DType::f64) {
      a.f.resize(n);
      for (auto& v : a.f) v = std::bit_cast<double>(u64());
    } else {
      a.i.resize(n);
      for (auto& v : a.i) v = static_cast<std::int64_t>(u64());
    }
    return a;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail(ErrorKind::format, "checkpoint truncated");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

Array f64(std::vector<std::uint64_t> dims, std::vector<double> v) {
  Array a;
  a.type = DType::f64;
  a.dims = std::move(dims);
  a.f = std::move(v);
  return a;
}

Array i64(std::vector<std::uint64_t> dims, std::vector<std::int64_t> v) {
  Array a;
  a.type = DType::i64;
  a.dims = std::move(dims);
  a.i = std::move(v);
  return a;
}

}  // namespace

std::string serialize_checkpoint(const ModelState& state) {
  state.validate();
  const Dataset& data = *state.data;
  const std::uint64_t K = state.features.size(), N = data.size();
  const std::uint64_t H = data.height(), W = data.width(), C = data.channels();
  const auto& sp = state.space;
  const std::uint64_t Fh = sp.canvas_height(), Fw = sp.canvas_width(), P = Fh * Fw;

  std::vector<std::pair<std::string, Array>> entries;
  entries.emplace_back("meta", i64({7}, {static_cast<std::int64_t>(state.variant), state.iteration,
                                         std::bit_cast<std::int64_t>(state.seed), state.next_feature_id,
                                         static_cast<std::int64_t>(K), sp.translations() ? 1 : 0,
                                         static_cast<std::int64_t>(N)}));
  entries.emplace_back("space_shape", i64({4}, {sp.image_height(), sp.image_width(), sp.canvas_height(),
                                                 sp.canvas_width()}));
  entries.emplace_back("rotations", f64({sp.rotations().size()}, sp.rotations()));
  entries.emplace_back("scales", f64({sp.scales().size()}, sp.scales()));
  const auto& h = state.hyper;
  entries.emplace_back("hyper", f64({10}, {h.alpha, h.beta, h.sigma_x, h.sigma_a, h.alpha_shape, h.alpha_rate,
                                           h.noise_shape, h.noise_scale, h.feature_shape, h.feature_scale}));
  entries.emplace_back("norm_mean", f64({data.channel_mean.size()}, data.channel_mean));
  entries.emplace_back("norm_stddev", f64({data.channel_stddev.size()}, data.channel_stddev));
  std::vector<double> pixels;
  pixels.reserve(N * C * H * W);
  for (const auto& img : data.images) pixels.insert(pixels.end(), img.values.begin(), img.values.end());
  entries.emplace_back("data", f64({N, C, H, W}, std::move(pixels)));

  std::vector<std::int64_t> ids, ranks, versions, z, r, s;
  std::vector<double> canvases, shapes;
  for (const auto& f : state.features) {
    ids.push_back(f.id);
    ranks.push_back(f.rank);
    versions.push_back(std::bit_cast<std::int64_t>(f.version));
    canvases.insert(canvases.end(), f.canvas.values.begin(), f.canvas.values.end());
    shapes.insert(shapes.end(), f.shape.begin(), f.shape.end());
    for (std::uint64_t n = 0; n < N; ++n) {
      z.push_back(f.used[n]);
      const auto& t = f.transforms[n];
      r.insert(r.end(), {t.dx, t.dy, t.rotation, t.scale});
      if (f.masks[n].empty()) {
        s.insert(s.end(), P, -1);
      } else {
        for (auto b : f.masks[n].bits) s.push_back(b);
      }
    }
  }
  entries.emplace_back("feature_id", i64({K}, std::move(ids)));
  entries.emplace_back("order", i64({K}, std::move(ranks)));
  entries.emplace_back("version", i64({K}, std::move(versions)));
  entries.emplace_back("features", f64({K, C, Fh, Fw}, std::move(canvases)));
  entries.emplace_back("pi", f64({state.masked() ? K : 0, Fh, Fw}, std::move(shapes)));
  entries.emplace_back("Z", i64({K, N}, std::move(z)));
  entries.emplace_back("R", i64({K, N, 4}, std::move(r)));
  entries.emplace_back("S", i64({K, N, Fh, Fw}, std::move(s)));

  std::vector<std::int64_t> words;
  std::istringstream rng(state.rng.save_state());
  for (std::string tok; rng >> tok;) {
    words.push_back(static_cast<std::int64_t>(std::stoull(tok)));
  }
  const std::uint64_t nwords = words.size();
  entries.emplace_back("rng", i64({nwords}, std::move(words)));

  Writer w;
  w.raw("TIBP");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, a] : entries) w.array(name, a);
  return w.take();
}

ModelState deserialize_checkpoint(const std::string& bytes) {
  Reader rd(bytes);
  if (bytes.size() < 4 || rd.raw(4) != "TIBP") fail(ErrorKind::format, "not a checkpoint (bad magic)");
  const auto version = rd.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::format, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = rd.u32();
  std::map<std::string, Array> arrays;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = rd.u32();
    if (len > 256) fail(ErrorKind::format, "checkpoint: implausible name length");
    std::string name = rd.raw(len);
    arrays[name] = rd.array();
  }
  if (!rd.done()) fail(ErrorKind::format, "checkpoint has trailing bytes");

  auto get = [&](const std::string& name, DType type, std::size_t rank) -> const Array& {
    auto it = arrays.find(name);
    if (it == arrays.end()) fail(ErrorKind::format, "checkpoint lacks '" + name + "'");
    if (it->second.type != type || it->second.dims.size() != rank) {
      fail(ErrorKind::format, "checkpoint array '" + name + "' has the wrong layout");
    }
    return it->second;
  };
  auto check_dims = [](const Array& a, std::vector<std::uint64_t> dims, const std::string& name) {
    if (a.dims != dims) fail(ErrorKind::format, "checkpoint array '" + name + "' has the wrong shape");
  };

  const auto& meta = get("meta", DType::i64, 1);
  check_dims(meta, {7}, "meta");
  ModelState st;
  const auto vtag = meta.i[0];
  if (vtag < 0 || vtag > 2) fail(ErrorKind::format, "checkpoint: unknown variant");
  st.variant = static_cast<Variant>(vtag);
  st.iteration = static_cast<int>(meta.i[1]);
  st.seed = std::bit_cast<std::uint64_t>(meta.i[2]);
  st.next_feature_id = static_cast<int>(meta.i[3]);
  const std::uint64_t K = meta.i[4];
  const bool translations = meta.i[5] != 0;
  const std::uint64_t N = meta.i[6];

  const auto& shape = get("space_shape", DType::i64, 1);
  check_dims(shape, {4}, "space_shape");
  try {
    st.space = TransformationSpace(static_cast<int>(shape.i[0]), static_cast<int>(shape.i[1]),
                                   static_cast<int>(shape.i[2]), static_cast<int>(shape.i[3]),
                                   get("rotations", DType::f64, 1).f, get("scales", DType::f64, 1).f,
                                   translations);
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("checkpoint: bad transformation space: ") + e.what());
  }
  const auto& hv = get("hyper", DType::f64, 1);
  check_dims(hv, {10}, "hyper");
  st.hyper = {hv.f[0], hv.f[1], hv.f[2], hv.f[3], hv.f[4], hv.f[5], hv.f[6], hv.f[7], hv.f[8], hv.f[9]};

  const auto& pix = get("data", DType::f64, 4);
  const std::uint64_t C = pix.dims[1], H = pix.dims[2], W = pix.dims[3];
  if (pix.dims[0] != N) fail(ErrorKind::format, "checkpoint: image count mismatch");
  auto data = std::make_shared<Dataset>();
  for (std::uint64_t n = 0; n < N; ++n) {
    Image img(static_cast<int>(H), static_cast<int>(W), static_cast<int>(C));
    std::copy_n(pix.f.begin() + n * C * H * W, C * H * W, img.values.begin());
    data->images.push_back(std::move(img));
  }
  data->channel_mean = get("norm_mean", DType::f64, 1).f;
  data->channel_stddev = get("norm_stddev", DType::f64, 1).f;
  st.data = data;

  const std::uint64_t Fh = st.space.canvas_height(), Fw = st.space.canvas_width(), P = Fh * Fw;
  const auto& ids = get("feature_id", DType::i64, 1);
  const auto& ranks = get("order", DType::i64, 1);
  const auto& versions = get("version", DType::i64, 1);
  const auto& canv = get("features", DType::f64, 4);
  const auto& pis = get("pi", DType::f64, 3);
  const auto& z = get("Z", DType::i64, 2);
  const auto& r = get("R", DType::i64, 3);
  const auto& s = get("S", DType::i64, 4);
  check_dims(ids, {K}, "feature_id");
  check_dims(ranks, {K}, "order");
  check_dims(versions, {K}, "version");
  check_dims(canv, {K, C, Fh, Fw}, "features");
  check_dims(pis, {st.masked() ? K : 0, Fh, Fw}, "pi");
  check_dims(z, {K, N}, "Z");
  check_dims(r, {K, N, 4}, "R");
  check_dims(s, {K, N, Fh, Fw}, "S");
  for (std::uint64_t k = 0; k < K; ++k) {
    Feature f;
    f.id = static_cast<int>(ids.i[k]);
    f.rank = static_cast<int>(ranks.i[k]);
    f.version = std::bit_cast<std::uint64_t>(versions.i[k]);
    f.canvas = FeatureCanvas(static_cast<int>(Fh), static_cast<int>(Fw), static_cast<int>(C));
    std::copy_n(canv.f.begin() + k * C * P, C * P, f.canvas.values.begin());
    if (st.masked()) f.shape.assign(pis.f.begin() + k * P, pis.f.begin() + (k + 1) * P);
    for (std::uint64_t n = 0; n < N; ++n) {
      f.used.push_back(static_cast<std::uint8_t>(z.i[k * N + n]));
      const auto* t = &r.i[(k * N + n) * 4];
      f.transforms.push_back({static_cast<int>(t[0]), static_cast<int>(t[1]), static_cast<int>(t[2]),
                              static_cast<int>(t[3])});
      const auto* m = &s.i[(k * N + n) * P];
      if (m[0] < 0) {
        f.masks.emplace_back();
      } else {
        BitGrid g(static_cast<int>(Fh), static_cast<int>(Fw));
        for (std::uint64_t d = 0; d < P; ++d) g[d] = static_cast<std::uint8_t>(m[d]);
        f.masks.push_back(std::move(g));
      }
    }
    st.features.push_back(std::move(f));
  }
  const auto& words = get("rng", DType::i64, 1);
  std::ostringstream rs;
  for (std::size_t i = 0; i < words.i.size(); ++i) {
    if (i) rs << ' ';
    rs << static_cast<std::uint64_t>(words.i[i]);
  }
  st.rng.load_state(rs.str());
  try {
    st.validate();
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("checkpoint holds an invalid state: ") + e.what());
  }
  return st;
}

void save_checkpoint(const ModelState& state, const fs::path& path) {
  write_file_atomic(path, serialize_checkpoint(state));
}

ModelState load_checkpoint(const fs::path& path) { return deserialize_checkpoint(read_file(path)); }

// ---- config ----

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& tok : split(text, ',')) {
    if (tok.empty()) fail(ErrorKind::usage, "empty entry in list '" + text + "'");
    const auto at = tok.find("pi");
    if (at == std::string::npos) {
      out.push_back(parse_real(tok));
      continue;
    }
    const std::string head = tok.substr(0, at);
    std::string tail = tok.substr(at + 2);
    double v = std::numbers::pi * (head.empty() ? 1.0 : parse_real(head));
    if (!tail.empty()) {
      if (tail[0] != '/') fail(ErrorKind::usage, "bad angle '" + tok + "'");
      v /= parse_real(tail.substr(1));
    }
    out.push_back(v);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& tok : split(text, ',')) out.push_back(static_cast<int>(parse_integer(tok)));
  return out;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.variant = variant;
  mc.canvas_h = canvas_h;
  mc.canvas_w = canvas_w;
  mc.rotations = rotations;
  mc.scales = scales;
  mc.hyper = hyper;
  mc.seed = seed;
  mc.warm_start_features = warm_start_features;
  return mc;
}

void RunConfig::validate() const {
  const auto& h = hyper;
  for (double v : {h.alpha, h.beta, h.sigma_x, h.sigma_a, h.alpha_shape, h.alpha_rate, h.noise_shape,
                   h.noise_scale, h.feature_shape, h.feature_scale, proposal_temperature}) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorKind::usage, "hyperparameters must be positive");
  }
  if (canvas_h < 0 || canvas_w < 0) fail(ErrorKind::usage, "canvas size must be non-negative");
  if (iterations < 0 || hyper_burnin < 0 || warm_start_features < 0) {
    fail(ErrorKind::usage, "counts must be non-negative");
  }
  if (rotations.empty() || scales.empty()) fail(ErrorKind::usage, "rotations and scales must be non-empty");
  for (double s : scales) {
    if (!(s > 0.0)) fail(ErrorKind::usage, "scales must be positive");
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::usage, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) fail(ErrorKind::usage, "config key '" + key + "' given twice");
    auto& h = c.hyper;
    if (key == "variant") c.variant = parse_variant(val);
    else if (key == "canvas_h") c.canvas_h = static_cast<int>(parse_integer(val));
    else if (key == "canvas_w") c.canvas_w = static_cast<int>(parse_integer(val));
    else if (key == "rotations") c.rotations = parse_real_list(val);
    else if (key == "scales") c.scales = parse_real_list(val);
    else if (key == "alpha") h.alpha = parse_real(val);
    else if (key == "beta") h.beta = parse_real(val);
    else if (key == "sigma_x") h.sigma_x = parse_real(val);
    else if (key == "sigma_a") h.sigma_a = parse_real(val);
    else if (key == "alpha_shape") h.alpha_shape = parse_real(val);
    else if (key == "alpha_rate") h.alpha_rate = parse_real(val);
    else if (key == "noise_shape") h.noise_shape = parse_real(val);
    else if (key == "noise_scale") h.noise_scale = parse_real(val);
    else if (key == "feature_shape") h.feature_shape = parse_real(val);
    else if (key == "feature_scale") h.feature_scale = parse_real(val);
    else if (key == "iterations") c.iterations = static_cast<int>(parse_integer(val));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_integer(val));
    else if (key == "proposal_temperature") c.proposal_temperature = parse_real(val);
    else if (key == "data_dir") c.data_dir = val;
    else if (key == "normalize") {
      if (val == "true" || val == "1") c.normalize = true;
      else if (val == "false" || val == "0") c.normalize = false;
      else fail(ErrorKind::usage, "normalize must be true or false");
    }
    else if (key == "resize_h") c.resize_h = static_cast<int>(parse_integer(val));
    else if (key == "resize_w") c.resize_w = static_cast<int>(parse_integer(val));
    else if (key == "warm_start_features") c.warm_start_features = static_cast<int>(parse_integer(val));
    else if (key == "hyper_burnin") c.hyper_burnin = static_cast<int>(parse_integer(val));
    else fail(ErrorKind::usage, "unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::usage, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& c) {
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
    return s;
  };
  const auto& h = c.hyper;
  std::ostringstream out;
  out << "variant = " << to_string(c.variant) << "\n"
      << "canvas_h = " << c.canvas_h << "\ncanvas_w = " << c.canvas_w << "\n"
      << "rotations = " << list(c.rotations) << "\nscales = " << list(c.scales) << "\n"
      << "alpha = " << format_real(h.alpha) << "\nbeta = " << format_real(h.beta) << "\n"
      << "sigma_x = " << format_real(h.sigma_x) << "\nsigma_a = " << format_real(h.sigma_a) << "\n"
      << "alpha_shape = " << format_real(h.alpha_shape) << "\nalpha_rate = " << format_real(h.alpha_rate) << "\n"
      << "noise_shape = " << format_real(h.noise_shape) << "\nnoise_scale = " << format_real(h.noise_scale) << "\n"
      << "feature_shape = " << format_real(h.feature_shape) << "\nfeature_scale = " << format_real(h.feature_scale)
      << "\niterations = " << c.iterations << "\nseed = " << c.seed << "\n"
      << "proposal_temperature = " << format_real(c.proposal_temperature) << "\n";
  if (!c.data_dir.empty()) out << "data_dir = " << c.data_dir << "\n";
  out << "normalize = " << (c.normalize ? "true" : "false") << "\n"
      << "resize_h = " << c.resize_h << "\nresize_w = " << c.resize_w << "\n"
      << "warm_start_features = " << c.warm_start_features << "\nhyper_burnin = " << c.hyper_burnin << "\n";
  return out.str();
}

// ---- trace ----

void write_trace_header(std::ostream& out) {
  out << "iteration,num_features,log_joint,log_likelihood,alpha,sigma_x,sigma_a";
  for (std::size_t m = 0; m < kMoveCount; ++m) {
    out << ',' << move_name(static_cast<Move>(m)) << "_proposed," << move_name(static_cast<Move>(m))
        << "_accepted";
  }
  out << ",seconds\n";
}

void write_trace_row(std::ostream& out, const SweepReport& rep, const ModelState& state) {
  out << rep.iteration << ',' << rep.num_features << ',' << format_real(rep.log_joint) << ','
      << format_real(rep.log_likelihood) << ',' << format_real(state.hyper.alpha) << ','
      << format_real(state.hyper.sigma_x) << ',' << format_real(state.hyper.sigma_a);
  for (const auto& m : rep.moves) out << ',' << m.proposed << ',' << m.accepted;
  out << ',' << rep.total_seconds << '\n';
}

}  // namespace tibp
