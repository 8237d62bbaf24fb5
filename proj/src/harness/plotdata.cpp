#include "diffrx/harness.hpp"

#include "diffrx/error.hpp"

#include <cmath>
#include <sstream>

namespace diffrx::harness {

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double number(const std::string& s, std::size_t line, const char* column) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError("line " + std::to_string(line) + ": column " + column + " is not a number ('" + s + "')");
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

std::string db(double y) { return y > 0.0 ? fmt(10.0 * std::log10(y)) : ""; }

} // namespace

std::string plotdata(const std::string& csv_text) {
    static const std::string kHeader = "series,x,y,err,y_db";
    std::istringstream in(csv_text);
    std::ostringstream out;
    out << kHeader << '\n';

    std::string line;
    if (!std::getline(in, line)) return out.str();
    if (!line.empty() && line.back() == '\r') line.pop_back();
    enum class Kind { sweep, ber, baseline, own } kind;
    if (line == "density,steps,pipeline,nmse_mean,nmse_std,n_grids,seed") kind = Kind::sweep;
    else if (line == "estimator,snr_db,density,ber,nmse_mean,n_bits,seed") kind = Kind::ber;
    else if (line == "density,estimator,nmse_mean,nmse_std,n_grids") kind = Kind::baseline;
    else if (line == kHeader) kind = Kind::own;
    else throw FormatError("line 1: unrecognized CSV header '" + line + "'");
    const std::size_t ncols = split(line).size();

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line);
        if (f.size() != ncols)
            throw FormatError("line " + std::to_string(lineno) + ": expected " + std::to_string(ncols) +
                              " fields, got " + std::to_string(f.size()));
        switch (kind) {
        case Kind::own:
            number(f[1], lineno, "x");
            number(f[2], lineno, "y");
            out << line << '\n';
            break;
        case Kind::sweep: {
            const double density = number(f[0], lineno, "density");
            number(f[1], lineno, "steps");
            if (f[3].empty()) break;  // absent checkpoint
            const double y = number(f[3], lineno, "nmse_mean");
            number(f[4], lineno, "nmse_std");
            out << "nmse:" << f[2] << "/d" << fmt(density) << ',' << f[1] << ',' << f[3] << ',' << f[4] << ','
                << db(y) << '\n';
            break;
        }
        case Kind::ber: {
            number(f[1], lineno, "snr_db");
            const double density = number(f[2], lineno, "density");
            number(f[3], lineno, "ber");
            const double nm = number(f[4], lineno, "nmse_mean");
            out << "ber:" << f[0] << "/d" << fmt(density) << ',' << f[1] << ',' << f[3] << ",,\n";
            out << "nmse:" << f[0] << "/d" << fmt(density) << ',' << f[1] << ',' << f[4] << ",," << db(nm) << '\n';
            break;
        }
        case Kind::baseline: {
            number(f[0], lineno, "density");
            const double y = number(f[2], lineno, "nmse_mean");
            number(f[3], lineno, "nmse_std");
            out << "nmse:" << f[1] << ',' << f[0] << ',' << f[2] << ',' << f[3] << ',' << db(y) << '\n';
            break;
        }
        }
    }
    return out.str();
}

} // namespace diffrx::harness
