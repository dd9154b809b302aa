#include "rqpipe/process.hpp"

#include <sys/wait.h>

#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "rqpipe/error.hpp"

namespace rqpipe {

namespace {

std::filesystem::path temp_path(const std::string& stem) {
  static std::atomic<unsigned> counter{0};
  return std::filesystem::temp_directory_path() /
         (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".txt");
}

}  // namespace

CommandResult run_command(const std::string& command) {
  const auto err_path = temp_path("rqpipe_stderr");
  const std::string full = "(\n" + command + "\n) 2>" + shell_quote(err_path.string());

  CommandResult result;
  FILE* pipe = ::popen(full.c_str(), "r");
  if (pipe == nullptr) throw IoError("cannot spawn '" + command + "'");
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) result.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);

  std::ifstream err(err_path);
  std::ostringstream ss;
  ss << err.rdbuf();
  result.err = ss.str();
  std::error_code ec;
  std::filesystem::remove(err_path, ec);
  return result;
}

std::string shell_quote(const std::string& value) {
  std::string out = "'";
  for (char c : value) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

std::vector<std::string> template_placeholders(const std::string& tmpl) {
  std::vector<std::string> names;
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    const auto close = tmpl.find('}', pos);
    if (close == std::string::npos) break;
    names.push_back(tmpl.substr(pos + 1, close - pos - 1));
    pos = close + 1;
  }
  return names;
}

std::string expand_template(const std::string& tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) break;
    const auto close = tmpl.find('}', open);
    if (close == std::string::npos) break;
    out.append(tmpl, pos, open - pos);
    const auto name = tmpl.substr(open + 1, close - open - 1);
    const auto it = values.find(name);
    if (it == values.end()) throw ConfigError("unknown placeholder {" + name + "} in '" + tmpl + "'");
    out += it->second;
    pos = close + 1;
  }
  out.append(tmpl, pos, std::string::npos);
  return out;
}

}  // namespace rqpipe
