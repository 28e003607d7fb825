#include "amplifier/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace amp {

namespace {

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits >>= 8;
  }
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<double>(bits);
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::size_t parse_size(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size() || text.empty() || text.front() == '-') throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw CheckpointError("corrupt manifest: bad " + what + " '" + text + "'");
  }
}

Shape parse_shape(const std::string& token) {
  Shape s;
  std::size_t start = 0;
  while (true) {
    const std::size_t x = token.find('x', start);
    s.push_back(parse_size(token.substr(start, x == std::string::npos ? std::string::npos : x - start), "shape"));
    if (x == std::string::npos) return s;
    start = x + 1;
  }
}

}  // namespace

void save_checkpoint(Forecaster& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  std::string header = "format_version=" + std::to_string(kCheckpointVersion) + "\n";
  for (const auto& [k, v] : model.config()) header += "config." + k + "=" + v + "\n";
  header += "meta.best_val=" + format_double(meta.best_val) + "\n";
  header += "meta.epoch=" + std::to_string(meta.epoch) + "\n";

  std::string payload;
  for (const Parameter* p : model.parameters()) {
    const std::size_t bytes = p->value.numel() * sizeof(double);
    header += "param " + p->name + " " + shape_token(p->value.shape()) + " " +
              std::to_string(payload.size()) + " " + std::to_string(bytes) + "\n";
    for (double v : p->value.data()) put_le(payload, v);
  }
  header += "payload_bytes=" + std::to_string(payload.size()) + "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  LoadedCheckpoint ck;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = blob.find('\n', pos);
    if (nl == std::string::npos) throw CheckpointError("truncated checkpoint header");
    std::string line = blob.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  const std::string version_line = next_line();
  if (version_line.rfind("format_version=", 0) != 0) {
    throw CheckpointError("not a checkpoint: first line must be format_version");
  }
  const std::string version = version_line.substr(15);
  if (version != std::to_string(kCheckpointVersion)) {
    throw CheckpointError("unsupported checkpoint version " + version + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }

  bool have_payload = false;
  while (!have_payload) {
    const std::string line = next_line();
    if (line.rfind("param ", 0) == 0) {
      std::istringstream fields(line.substr(6));
      std::string name, shape, offset, bytes, extra;
      if (!(fields >> name >> shape >> offset >> bytes) || (fields >> extra)) {
        throw CheckpointError("corrupt manifest line '" + line + "'");
      }
      ck.manifest.push_back({name, parse_shape(shape), parse_size(offset, "offset"), parse_size(bytes, "length")});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("corrupt header line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key.rfind("config.", 0) == 0) {
        ck.config[key.substr(7)] = value;
      } else if (key == "meta.best_val") {
        ck.meta.best_val = parse_double(key, value);
      } else if (key == "meta.epoch") {
        ck.meta.epoch = parse_size(value, "epoch");
      } else if (key == "payload_bytes") {
        ck.payload_bytes = parse_size(value, "payload size");
        have_payload = true;
      } else {
        throw CheckpointError("unknown header key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("corrupt header: ") + e.what());
    }
  }

  std::size_t expected_offset = 0;
  for (const auto& e : ck.manifest) {
    if (e.offset != expected_offset || e.bytes != shape_numel(e.shape) * sizeof(double)) {
      throw CheckpointError("corrupt manifest: entry '" + e.name + "' is not contiguous");
    }
    expected_offset += e.bytes;
  }
  if (expected_offset != ck.payload_bytes) {
    throw CheckpointError("corrupt manifest: entries cover " + std::to_string(expected_offset) +
                          " bytes, payload declares " + std::to_string(ck.payload_bytes));
  }
  if (blob.size() - pos != ck.payload_bytes) {
    throw CheckpointError("truncated checkpoint: expected " + std::to_string(ck.payload_bytes) +
                          " payload bytes, found " + std::to_string(blob.size() - pos));
  }

  std::unique_ptr<Forecaster> model;
  try {
    Rng scratch(0);
    model = make_forecaster(ck.config, scratch);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config rejected: ") + e.what());
  }
  const auto params = model->parameters();
  if (params.size() != ck.manifest.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ck.manifest.size()) +
                          " parameters, architecture expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = ck.manifest[i];
    if (params[i]->name != e.name || params[i]->value.shape() != e.shape) {
      throw CheckpointError("parameter " + std::to_string(i) + ": checkpoint has '" + e.name + "' " +
                            shape_str(e.shape) + ", architecture expects '" + params[i]->name + "' " +
                            shape_str(params[i]->value.shape()));
    }
    auto dst = params[i]->value.mutable_data();
    const char* src = blob.data() + pos + e.offset;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = get_le(src + 8 * j);
  }
  ck.model = std::move(model);
  return ck;
}

}  // namespace amp
