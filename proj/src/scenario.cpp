#include "lipstab/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace lipstab {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

[[noreturn]] void parse_fail(int line, const std::string& message) {
  fail(ErrorKind::ParseError, "line " + std::to_string(line) + ": " + message);
}

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

struct Section {
  std::string name;
  int index = 0;  ///< numeric suffix of [name.index], 0 when absent
  int line = 0;
  std::vector<Entry> entries;
};

double number_at(const std::string& text, int line) {
  try {
    return parse_number(text);
  } catch (const Error&) {
    parse_fail(line, "not a number: '" + text + "'");
  }
}

std::vector<double> numbers_at(const std::string& text, int line) {
  std::vector<double> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    if (tok.back() == ',') tok.pop_back();
    if (!tok.empty()) out.push_back(number_at(tok, line));
  }
  return out;
}

long integer_at(const std::string& text, int line) {
  double v = number_at(text, line);
  if (v != static_cast<double>(static_cast<long>(v))) parse_fail(line, "expected an integer: '" + text + "'");
  return static_cast<long>(v);
}

std::uint64_t seed_at(const std::string& text, int line) {
  try {
    std::size_t used = 0;
    if (text.empty() || text.front() < '0' || text.front() > '9') parse_fail(line, "expected a seed: '" + text + "'");
    std::uint64_t v = std::stoull(text, &used);
    if (used != text.size()) parse_fail(line, "expected a seed: '" + text + "'");
    return v;
  } catch (const std::logic_error&) {
    parse_fail(line, "expected a seed: '" + text + "'");
  }
}

Point point_at(const std::vector<double>& v, int dim, int line, const std::string& what) {
  if (static_cast<int>(v.size()) != dim) {
    parse_fail(line, what + " needs " + std::to_string(dim) + " components, got " + std::to_string(v.size()));
  }
  Point p{0.0, 0.0, 0.0};
  for (int d = 0; d < dim; ++d) p[d] = v[static_cast<std::size_t>(d)];
  return p;
}

[[noreturn]] void unknown_key(const Section& s, const Entry& e) {
  parse_fail(e.line, "unknown key '" + e.key + "' in [" + s.name + (s.index ? "." + std::to_string(s.index) : "") + "]");
}

}  // namespace

double parse_number(const std::string& text) {
  std::string t = trim(text);
  auto slash = t.find('/');
  try {
    std::size_t used = 0;
    if (slash == std::string::npos) {
      double v = std::stod(t, &used);
      if (used == t.size()) return v;
    } else {
      std::string num = trim(t.substr(0, slash)), den = trim(t.substr(slash + 1));
      std::size_t u2 = 0;
      double a = std::stod(num, &used);
      double b = std::stod(den, &u2);
      if (used == num.size() && u2 == den.size() && b != 0.0) return a / b;
    }
  } catch (const std::logic_error&) {
  }
  fail(ErrorKind::ParseError, "not a number: '" + text + "'");
}

Scenario parse_scenario(std::istream& in, const std::string& origin) {
  std::vector<Section> sections;
  std::string canonical;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find_first_of("#;")));
    if (line.empty()) continue;
    canonical += line;
    canonical += '\n';
    if (line.front() == '[') {
      if (line.back() != ']') parse_fail(line_no, "unterminated section header");
      std::string name = lower(trim(line.substr(1, line.size() - 2)));
      Section s;
      s.line = line_no;
      auto dot = name.find('.');
      if (dot != std::string::npos) {
        s.name = name.substr(0, dot);
        s.index = static_cast<int>(integer_at(name.substr(dot + 1), line_no));
        if (s.index < 1) parse_fail(line_no, "section indices start at 1");
      } else {
        s.name = name;
      }
      static const char* known[] = {"domain", "chain", "portion", "mesh", "solver", "potential",
                                    "reference", "forward", "runge", "peel", "stability"};
      if (std::find(std::begin(known), std::end(known), s.name) == std::end(known)) {
        parse_fail(line_no, "unknown section [" + name + "]");
      }
      bool indexed = s.name == "portion" || s.name == "potential" || s.name == "reference";
      if (indexed != (s.index > 0)) parse_fail(line_no, "section [" + name + "] " + (indexed ? "needs" : "takes no") + " an index");
      for (const Section& prev : sections) {
        if (prev.name == s.name && prev.index == s.index) parse_fail(line_no, "duplicate section [" + name + "]");
      }
      sections.push_back(std::move(s));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) parse_fail(line_no, "expected key = value");
    if (sections.empty()) parse_fail(line_no, "key outside of a section");
    Entry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) parse_fail(line_no, "empty key");
    if (e.value.empty()) parse_fail(line_no, "empty value for '" + e.key + "'");
    for (const Entry& prev : sections.back().entries) {
      if (prev.key == e.key && e.key != "box") parse_fail(line_no, "duplicate key '" + e.key + "'");
    }
    sections.back().entries.push_back(std::move(e));
  }

  Scenario sc;
  sc.origin = origin;
  sc.hash = fnv1a(canonical);

  const Section* domain = nullptr;
  for (const Section& s : sections) {
    if (s.name == "domain") domain = &s;
  }
  if (domain == nullptr) parse_fail(line_no, "missing [domain] section");

  PartitionConfig& cfg = sc.config;
  std::vector<std::pair<std::vector<double>, int>> box_lines;
  for (const Entry& e : domain->entries) {
    if (e.key == "dimension") {
      cfg.dimension = static_cast<int>(integer_at(e.value, e.line));
      if (cfg.dimension < 2 || cfg.dimension > 3) parse_fail(e.line, "dimension must be 2 or 3");
    } else if (e.key == "box") {
      box_lines.emplace_back(numbers_at(e.value, e.line), e.line);
    } else if (e.key == "r0") {
      cfg.r0 = number_at(e.value, e.line);
    } else if (e.key == "lipschitz") {
      cfg.lipschitz = number_at(e.value, e.line);
    } else {
      unknown_key(*domain, e);
    }
  }
  if (box_lines.empty()) parse_fail(domain->line, "[domain] lists no box");
  const int dim = cfg.dimension;
  for (const auto& [v, line] : box_lines) {
    if (static_cast<int>(v.size()) != 2 * dim) {
      parse_fail(line, "box needs " + std::to_string(2 * dim) + " numbers (lower corner, upper corner)");
    }
    Box b;
    for (int d = 0; d < dim; ++d) {
      b.lo[d] = v[static_cast<std::size_t>(d)];
      b.hi[d] = v[static_cast<std::size_t>(dim + d)];
    }
    cfg.boxes.push_back(b);
  }
  const int count = static_cast<int>(cfg.boxes.size());

  std::map<int, PortionSpec> portions;
  std::map<int, int> portion_lines;
  std::map<int, AffinePiece> potential, reference;
  for (const Section& s : sections) {
    if (s.name == "domain") continue;
    if (s.name == "chain") {
      for (const Entry& e : s.entries) {
        if (e.key != "order") unknown_key(s, e);
        for (double v : numbers_at(e.value, e.line)) {
          int j = static_cast<int>(v);
          if (j != v || j < 1 || j > count) parse_fail(e.line, "chain entry " + format_double(v) + " is not a subdomain index");
          cfg.chain.push_back(j - 1);
        }
      }
    } else if (s.name == "portion") {
      PortionSpec p;
      bool anchor = false, axis = false, extent = false;
      for (const Entry& e : s.entries) {
        if (e.key == "anchor") {
          p.anchor = point_at(numbers_at(e.value, e.line), dim, e.line, "anchor");
          anchor = true;
        } else if (e.key == "axis") {
          long a = integer_at(e.value, e.line);
          if (a < 1 || a > dim) parse_fail(e.line, "axis must be between 1 and " + std::to_string(dim));
          p.axis = static_cast<int>(a - 1);
          axis = true;
        } else if (e.key == "extent") {
          p.extent = number_at(e.value, e.line);
          extent = true;
        } else {
          unknown_key(s, e);
        }
      }
      if (!anchor || !axis || !extent) parse_fail(s.line, "portion needs anchor, axis and extent");
      portions[s.index] = p;
      portion_lines[s.index] = s.line;
    } else if (s.name == "mesh") {
      for (const Entry& e : s.entries) {
        if (e.key != "h") unknown_key(s, e);
        sc.h = number_at(e.value, e.line);
        if (!(sc.h > 0.0)) parse_fail(e.line, "h must be positive");
      }
    } else if (s.name == "solver") {
      SolverOptions& so = sc.tolerances.solver;
      for (const Entry& e : s.entries) {
        if (e.key == "residual_tol") so.residual_tol = number_at(e.value, e.line);
        else if (e.key == "spectral_tau") so.spectral_tau = number_at(e.value, e.line);
        else if (e.key == "max_power_iterations") so.max_power_iterations = static_cast<int>(integer_at(e.value, e.line));
        else if (e.key == "power_tol") so.power_tol = number_at(e.value, e.line);
        else if (e.key == "sigma_floor") sc.tolerances.sigma_floor = number_at(e.value, e.line);
        else if (e.key == "solution_tol") sc.tolerances.solution_tol = number_at(e.value, e.line);
        else unknown_key(s, e);
      }
    } else if (s.name == "potential" || s.name == "reference") {
      if (s.index > count) parse_fail(s.line, "no subdomain " + std::to_string(s.index));
      AffinePiece piece;
      for (const Entry& e : s.entries) {
        if (e.key == "a") piece.a = number_at(e.value, e.line);
        else if (e.key == "A") piece.A = point_at(numbers_at(e.value, e.line), dim, e.line, "A");
        else unknown_key(s, e);
      }
      (s.name == "potential" ? potential : reference)[s.index - 1] = piece;
    } else if (s.name == "forward") {
      for (const Entry& e : s.entries) {
        if (e.key == "datum") {
          std::string v = lower(e.value);
          if (v == "sine") sc.forward.datum = ForwardDatum::Sine;
          else if (v == "affine") sc.forward.datum = ForwardDatum::Affine;
          else if (v == "bump") sc.forward.datum = ForwardDatum::Bump;
          else parse_fail(e.line, "datum must be sine, affine or bump");
        } else if (e.key == "coeffs") {
          sc.forward.coeffs = numbers_at(e.value, e.line);
          if (static_cast<int>(sc.forward.coeffs.size()) != dim + 1) {
            parse_fail(e.line, "coeffs needs " + std::to_string(dim + 1) + " numbers");
          }
        } else if (e.key == "portion") {
          sc.forward.portion = static_cast<int>(integer_at(e.value, e.line));
        } else {
          unknown_key(s, e);
        }
      }
      if (sc.forward.datum == ForwardDatum::Affine && sc.forward.coeffs.empty()) {
        parse_fail(s.line, "affine datum needs coeffs");
      }
    } else if (s.name == "runge") {
      for (const Entry& e : s.entries) {
        if (e.key == "step") {
          sc.runge.step = static_cast<int>(integer_at(e.value, e.line));
        } else if (e.key == "eps") {
          sc.runge.eps = numbers_at(e.value, e.line);
        } else if (e.key == "target") {
          std::string v = lower(e.value);
          if (v == "bump") sc.runge.target = RungeTarget::Bump;
          else if (v == "affine") sc.runge.target = RungeTarget::Affine;
          else parse_fail(e.line, "target must be bump or affine");
        } else {
          unknown_key(s, e);
        }
      }
    } else if (s.name == "peel") {
      for (const Entry& e : s.entries) {
        if (e.key == "eps") {
          sc.peel.eps = numbers_at(e.value, e.line);
        } else if (e.key == "correction") {
          std::string v = lower(e.value);
          if (v == "exact") sc.peel.correction = CorrectionSource::Exact;
          else if (v == "recovered") sc.peel.correction = CorrectionSource::Recovered;
          else parse_fail(e.line, "correction must be exact or recovered");
        } else if (e.key == "measured1") {
          sc.peel.measured1 = e.value;
        } else if (e.key == "measured2") {
          sc.peel.measured2 = e.value;
        } else if (e.key == "noise") {
          sc.peel.noise = number_at(e.value, e.line);
        } else if (e.key == "seed") {
          sc.peel.seed = seed_at(e.value, e.line);
        } else {
          unknown_key(s, e);
        }
      }
      if (sc.peel.measured1.empty() != sc.peel.measured2.empty()) {
        parse_fail(s.line, "measured1 and measured2 go together");
      }
      if (sc.peel.noise > 0.0 && !sc.peel.seed) parse_fail(s.line, "noise needs a seed");
    } else if (s.name == "stability") {
      sc.stability.present = true;
      for (const Entry& e : s.entries) {
        if (e.key == "pairs") sc.stability.pairs = static_cast<int>(integer_at(e.value, e.line));
        else if (e.key == "seed") sc.stability.seed = seed_at(e.value, e.line);
        else if (e.key == "E0") sc.stability.E0 = number_at(e.value, e.line);
        else unknown_key(s, e);
      }
      if (!sc.stability.seed) parse_fail(s.line, "[stability] needs a seed");
      if (sc.stability.pairs < 1) parse_fail(s.line, "pairs must be positive");
    }
  }

  for (const auto& [k, p] : portions) {
    if (k != static_cast<int>(cfg.portions.size()) + 1) {
      parse_fail(portion_lines[k], "portions must be numbered 1.." + std::to_string(portions.size()));
    }
    cfg.portions.push_back(p);
  }
  if (!sc.peel.measured1.empty() && !origin.empty() && origin.front() != '<') {
    auto dir = std::filesystem::path(origin).parent_path();
    for (std::string* p : {&sc.peel.measured1, &sc.peel.measured2}) {
      if (std::filesystem::path(*p).is_relative()) *p = (dir / *p).string();
    }
  }

  sc.partition = std::make_shared<const DomainPartition>(build_partition(cfg));
  if (sc.forward.portion < 1 || sc.forward.portion > sc.partition->chain_length()) {
    fail(ErrorKind::IndexOutOfChain, "forward portion " + std::to_string(sc.forward.portion) + " is not in the chain");
  }
  sc.has_potential = !potential.empty();
  std::vector<AffinePiece> p1(static_cast<std::size_t>(count)), p2(static_cast<std::size_t>(count));
  for (const auto& [j, piece] : potential) p1[static_cast<std::size_t>(j)] = piece;
  for (const auto& [j, piece] : reference) p2[static_cast<std::size_t>(j)] = piece;
  sc.q1 = PiecewiseAffinePotential(sc.partition, p1);
  sc.q2 = PiecewiseAffinePotential(sc.partition, p2);
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open scenario " + path);
  return parse_scenario(in, path);
}

}  // namespace lipstab
