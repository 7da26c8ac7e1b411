#include "advx/checkpoint.hpp"

#include <sstream>

#include "advx/errors.hpp"
#include "advx/io.hpp"

namespace advx::ckpt {

namespace {

constexpr std::string_view kMagic = "advx-checkpoint v1";

void put_dense(Checkpoint& c, const std::string& prefix, const model::DenseParams& p) {
  c.put(prefix + ".weights", p.weights);
  c.put(prefix + ".bias", p.bias);
}

model::DenseParams get_dense(const Checkpoint& c, const std::string& prefix) {
  return {c.get(prefix + ".weights"), c.get(prefix + ".bias")};
}

}  // namespace

const ad::RealArray& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, a] : arrays) {
    if (n == name) return a;
  }
  throw DataError("checkpoint has no array '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& entry : arrays) {
    if (entry.first == name) return true;
  }
  return false;
}

void Checkpoint::put(std::string name, ad::RealArray value) {
  for (auto& [n, a] : arrays) {
    if (n == name) {
      a = std::move(value);
      return;
    }
  }
  arrays.emplace_back(std::move(name), std::move(value));
}

std::string serialize(const Checkpoint& checkpoint) {
  std::ostringstream os;
  os << kMagic << '\n';
  os << "config\t" << checkpoint.config.size() << '\n';
  for (const auto& [k, v] : checkpoint.config) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw DataError("checkpoint config entry '" + k + "' contains '=' or newline");
    }
    os << k << '=' << v << '\n';
  }
  os << "arrays\t" << checkpoint.arrays.size() << '\n';
  for (const auto& [name, a] : checkpoint.arrays) {
    os << name << '\t' << a.rank();
    for (auto d : a.shape()) os << '\t' << d;
    os << '\n';
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (i) os << ' ';
      os << io::hex_double(a[i]);
    }
    os << '\n';
  }
  os << "end\n";
  return os.str();
}

Checkpoint deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string& {
    if (!std::getline(in, line)) {
      throw DataError("checkpoint truncated after line " + std::to_string(line_no));
    }
    ++line_no;
    return line;
  };
  auto fail = [&](const std::string& what) {
    return DataError("checkpoint line " + std::to_string(line_no) + ": " + what);
  };

  if (next() != kMagic) throw fail("not an advx checkpoint (v1)");
  Checkpoint c;
  auto header = io::split(next(), '\t');
  if (header.size() != 2 || header[0] != "config") throw fail("expected config header");
  const auto n_config = io::parse_int(header[1]);
  for (std::int64_t i = 0; i < n_config; ++i) {
    const std::string& l = next();
    const auto eq = l.find('=');
    if (eq == std::string::npos) throw fail("config line without '='");
    c.config[l.substr(0, eq)] = l.substr(eq + 1);
  }
  header = io::split(next(), '\t');
  if (header.size() != 2 || header[0] != "arrays") throw fail("expected arrays header");
  const auto n_arrays = io::parse_int(header[1]);
  for (std::int64_t i = 0; i < n_arrays; ++i) {
    auto fields = io::split(next(), '\t');
    if (fields.size() < 2) throw fail("bad array header");
    std::string name(fields[0]);
    const auto rank = static_cast<std::size_t>(io::parse_int(fields[1]));
    if (fields.size() != rank + 2) throw fail("array header rank mismatch");
    std::vector<std::size_t> shape;
    for (std::size_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::size_t>(io::parse_int(fields[d + 2])));
    }
    std::vector<double> values;
    const std::string& data = next();
    if (!data.empty()) {
      for (auto tok : io::split(data, ' ')) values.push_back(io::parse_double(tok));
    }
    try {
      c.arrays.emplace_back(std::move(name), ad::RealArray(std::move(shape), std::move(values)));
    } catch (const std::exception& e) {
      throw fail(e.what());
    }
  }
  if (next() != "end") throw fail("expected 'end'");
  return c;
}

void save(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  io::write_file_atomic(path, serialize(checkpoint));
}

Checkpoint load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return deserialize(io::read_file(path));
}

void put_model(Checkpoint& checkpoint, const model::MultVaeParams& params) {
  put_dense(checkpoint, "encoder.hidden", params.encoder.hidden);
  put_dense(checkpoint, "encoder.mu", params.encoder.mu);
  put_dense(checkpoint, "encoder.logsigma", params.encoder.logsigma);
  put_dense(checkpoint, "decoder.hidden", params.decoder.hidden);
  put_dense(checkpoint, "decoder.output", params.decoder.output);
}

model::MultVaeParams get_model(const Checkpoint& checkpoint) {
  model::MultVaeParams p;
  p.encoder.hidden = get_dense(checkpoint, "encoder.hidden");
  p.encoder.mu = get_dense(checkpoint, "encoder.mu");
  p.encoder.logsigma = get_dense(checkpoint, "encoder.logsigma");
  p.decoder.hidden = get_dense(checkpoint, "decoder.hidden");
  p.decoder.output = get_dense(checkpoint, "decoder.output");
  return p;
}

void put_head(Checkpoint& checkpoint, const std::string& prefix, const adv::AdvHeadParams& head) {
  put_dense(checkpoint, prefix + ".hidden", head.hidden);
  put_dense(checkpoint, prefix + ".output", head.output);
}

adv::AdvHeadParams get_head(const Checkpoint& checkpoint, const std::string& prefix) {
  return {get_dense(checkpoint, prefix + ".hidden"), get_dense(checkpoint, prefix + ".output")};
}

}  // namespace advx::ckpt
