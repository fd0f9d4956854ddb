#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rescomb/error.hpp"
#include "rescomb/ngram.hpp"

namespace rescomb {

namespace {

constexpr double kLn10 = 2.302585092994045684;
constexpr double kArpaZero = -99.0;

std::string format_log10(double ln_value) {
    if (std::isinf(ln_value) && ln_value < 0) return "-99";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.7g", ln_value / kLn10);
    return buf;
}

double parse_log10(const std::string& s, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw ParseError("bad ARPA number '" + s + "'", line);
    if (v <= kArpaZero) return -INFINITY;
    return v * kLn10;
}

} // namespace

void write_arpa(std::ostream& out, const NGramModel& model) {
    out << "\n\\data\\\n";
    for (int n = 1; n <= model.order(); ++n) out << "ngram " << n << '=' << model.tables[n - 1].size() << '\n';
    for (int n = 1; n <= model.order(); ++n) {
        out << "\n\\" << n << "-grams:\n";
        for (const auto& [g, e] : model.tables[n - 1]) {
            out << format_log10(e.log_prob) << '\t';
            for (std::size_t i = 0; i < g.size(); ++i) out << (i ? " " : "") << g[i];
            if (e.log_backoff) out << '\t' << format_log10(*e.log_backoff);
            out << '\n';
        }
    }
    out << "\n\\end\\\n";
}

NGramModel read_arpa(std::istream& in) {
    NGramModel model;
    std::vector<std::size_t> declared;
    std::string line;
    std::size_t lineno = 0;
    enum class State { Preamble, Data, Grams, End } state = State::Preamble;
    int current = 0;

    auto close_section = [&](std::size_t at) {
        if (current == 0) return;
        if (model.tables[current - 1].size() != declared[current - 1])
            throw ParseError("\\data\\ declares " + std::to_string(declared[current - 1]) + " " +
                                 std::to_string(current) + "-grams but section has " +
                                 std::to_string(model.tables[current - 1].size()),
                             at);
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (state == State::Preamble) {
            if (line == "\\data\\") state = State::Data;
            continue;
        }
        if (state == State::End) throw ParseError("content after \\end\\", lineno);
        if (line == "\\end\\") {
            close_section(lineno);
            state = State::End;
            continue;
        }
        if (line.front() == '\\') {
            int n = 0;
            if (std::sscanf(line.c_str(), "\\%d-grams:", &n) != 1 || n < 1 ||
                n > static_cast<int>(declared.size()) || n != current + 1)
                throw ParseError("unexpected section header '" + line + "'", lineno);
            close_section(lineno);
            current = n;
            state = State::Grams;
            continue;
        }
        if (state == State::Data) {
            int n = 0;
            long count = 0;
            char tail = 0;
            if (std::sscanf(line.c_str(), "ngram %d=%ld%c", &n, &count, &tail) != 2 || n < 1 || count < 0 ||
                n != static_cast<int>(declared.size()) + 1)
                throw ParseError("bad \\data\\ line '" + line + "'", lineno);
            declared.push_back(static_cast<std::size_t>(count));
            model.tables.emplace_back();
            continue;
        }
        // Entry of the current order.
        std::istringstream ss(line);
        std::vector<std::string> f;
        for (std::string w; ss >> w;) f.push_back(w);
        const auto n = static_cast<std::size_t>(current);
        if (f.size() != n + 1 && f.size() != n + 2)
            throw ParseError("malformed " + std::to_string(n) + "-gram entry", lineno);
        NGramEntry e;
        e.log_prob = parse_log10(f[0], lineno);
        if (f.size() == n + 2) e.log_backoff = parse_log10(f[n + 1], lineno);
        NGram g(f.begin() + 1, f.begin() + 1 + n);
        if (!model.tables[n - 1].emplace(std::move(g), e).second)
            throw ParseError("duplicate n-gram", lineno);
        if (model.tables[n - 1].size() > declared[n - 1])
            throw ParseError("more " + std::to_string(n) + "-grams than declared in \\data\\", lineno);
    }
    if (state != State::End) throw ParseError("missing \\end\\", lineno);
    if (current != static_cast<int>(declared.size())) throw ParseError("missing n-gram sections", lineno);
    model.refresh_vocab();
    return model;
}

void write_arpa_file(const std::filesystem::path& path, const NGramModel& model) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    write_arpa(out, model);
}

NGramModel read_arpa_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return read_arpa(in);
}

} // namespace rescomb
