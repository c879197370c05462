#include "wmlab/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace wmlab {

namespace {

std::string html_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// EXP shading: bucket -ln(1-u) into five intensities; higher value = more
// watermark-consistent = darker.
int exp_bucket(double value) {
    if (value < 0.5) return 0;
    if (value < 1.0) return 1;
    if (value < 2.0) return 2;
    if (value < 3.5) return 3;
    return 4;
}

const char* EXP_HTML_SHADES[5] = {"#f4fbf4", "#d4eed4", "#a9dca9", "#72c272", "#2f9e2f"};

}  // namespace

std::string annotate(const TokenSeq& seq, const Vocabulary& vocab, const Detector& detector,
                     AnnotateFormat format) {
    const DetectionDetail detail = detector.detect_detailed(seq);
    const bool exp = detector.config().algorithm == WatermarkAlgorithm::EXP;

    std::ostringstream head;
    head.precision(4);
    head << to_string(detector.config().algorithm) << " score=" << detail.result.score
         << " threshold=" << detail.result.threshold_used
         << " decision=" << (detail.result.decision ? "watermarked" : "clean");
    if (!exp)
        head << " green=" << detail.result.green_count << "/" << detail.result.scored_tokens;

    if (format == AnnotateFormat::Ansi) {
        std::ostringstream out;
        out << head.str() << "\n";
        for (size_t t = 0; t < seq.n(); ++t) {
            const std::string& text = vocab.token(seq.ids[t]);
            const TokenDetail& td = detail.tokens[t];
            if (t) out << ' ';
            if (!td.scored) {
                out << "\x1b[90m" << text << "\x1b[0m";  // gray: unscored
            } else if (exp) {
                static const int shades[5] = {255, 194, 40, 34, 28};
                out << "\x1b[38;5;" << shades[exp_bucket(td.exp_value)] << "m" << text
                    << "\x1b[0m";
            } else if (td.green) {
                out << "\x1b[42;30m" << text << "\x1b[0m";
            } else {
                out << "\x1b[41;30m" << text << "\x1b[0m";
            }
        }
        out << "\n";
        return out.str();
    }

    // self-contained HTML: inline styles only
    std::ostringstream out;
    out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        << "<title>watermark annotation</title></head>\n"
        << "<body style=\"font-family:monospace;background:#ffffff;color:#111111;"
           "line-height:1.8;padding:1em;\">\n"
        << "<div style=\"margin-bottom:0.8em;font-weight:bold;\">" << html_escape(head.str())
        << "</div>\n<div>";
    for (size_t t = 0; t < seq.n(); ++t) {
        const std::string& text = html_escape(vocab.token(seq.ids[t]));
        const TokenDetail& td = detail.tokens[t];
        if (t) out << ' ';
        if (!td.scored) {
            out << "<span style=\"color:#999999;\">" << text << "</span>";
        } else if (exp) {
            out << "<span style=\"background:" << EXP_HTML_SHADES[exp_bucket(td.exp_value)]
                << ";\" title=\"" << td.exp_value << "\">" << text << "</span>";
        } else if (td.green) {
            out << "<span style=\"background:#b8e6b8;\">" << text << "</span>";
        } else {
            out << "<span style=\"background:#f0b8b8;\">" << text << "</span>";
        }
    }
    out << "</div>\n</body></html>\n";
    return out.str();
}

}  // namespace wmlab
