#include "synergrasp/container.hpp"

#include <bit>
#include <cstring>

#include "synergrasp/error.hpp"
#include "synergrasp/fileutil.hpp"

namespace synergrasp {

namespace {

constexpr const char* kMagic = "SYNERGRASP-ARTIFACT";

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.append(buf, 8);
}

double get_f64(const char* p) {
  std::uint64_t bits;
  std::memcpy(&bits, p, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

const Eigen::MatrixXd& Container::get(const std::string& name, Eigen::Index rows,
                                      Eigen::Index cols) const {
  for (const auto& [n, m] : arrays) {
    if (n != name) continue;
    if ((rows >= 0 && m.rows() != rows) || (cols >= 0 && m.cols() != cols))
      throw ParseError(kind + ": array '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()));
    return m;
  }
  throw ParseError(kind + ": missing array '" + name + "'");
}

std::string encode_container(const Container& c) {
  nlohmann::json header;
  header["kind"] = c.kind;
  header["version"] = c.version;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, m] : c.arrays)
    header["arrays"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  std::string out = std::string(kMagic) + "\n" + header.dump() + "\n";
  for (const auto& [name, m] : c.arrays)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
  return out;
}

Container decode_container(const std::string& bytes, const std::string& expected_kind) {
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || bytes.compare(0, nl1, kMagic) != 0)
    throw ParseError("not a synergrasp artifact (bad magic)", 1);
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw ParseError("artifact header not terminated", 2);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("artifact header: ") + e.what(), 2);
  }
  Container c;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.version = header.at("version").get<int>();
    c.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("artifact header: ") + e.what(), 2);
  }
  if (!expected_kind.empty() && c.kind != expected_kind)
    throw ParseError("artifact kind '" + c.kind + "' where '" + expected_kind + "' was expected");

  std::size_t pos = nl2 + 1;
  for (const auto& a : header.at("arrays")) {
    const auto rows = a.at("rows").get<Eigen::Index>();
    const auto cols = a.at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0) throw ParseError("artifact: negative array dimension");
    const auto n = static_cast<std::size_t>(rows * cols);
    if (bytes.size() < pos + 8 * n) throw ParseError("artifact payload truncated");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        m(i, j) = get_f64(bytes.data() + pos);
        pos += 8;
      }
    c.arrays.emplace_back(a.at("name").get<std::string>(), std::move(m));
  }
  if (pos != bytes.size()) throw ParseError("artifact has trailing bytes");
  return c;
}

void save_container(const Container& c, const std::filesystem::path& path) {
  write_file_atomic(path, encode_container(c));
}

Container load_container(const std::filesystem::path& path, const std::string& expected_kind) {
  return decode_container(read_file(path), expected_kind);
}

}  // namespace synergrasp
