#include "htr/data.hpp"

namespace htr {

// 5x7 bitmap forms for the synthetic writer. '#' marks ink.
namespace {

struct GlyphDef {
    char32_t ch;
    GlyphBitmap bitmap;
};

const GlyphDef kGlyphs[] = {
    {U' ', {{".....", ".....", ".....", ".....", ".....", ".....", "....."}}},
    {U'a', {{".....", ".###.", "....#", ".####", "#...#", ".####", "....."}}},
    {U'b', {{"#....", "#....", "####.", "#...#", "#...#", "####.", "....."}}},
    {U'c', {{".....", ".###.", "#....", "#....", "#....", ".###.", "....."}}},
    {U'd', {{"....#", "....#", ".####", "#...#", "#...#", ".####", "....."}}},
    {U'e', {{".....", ".###.", "#...#", "#####", "#....", ".###.", "....."}}},
    {U'f', {{"..##.", ".#...", "###..", ".#...", ".#...", ".#...", "....."}}},
    {U'g', {{".....", ".####", "#...#", ".####", "....#", ".###.", "....."}}},
    {U'h', {{"#....", "#....", "####.", "#...#", "#...#", "#...#", "....."}}},
    {U'i', {{"..#..", ".....", ".##..", "..#..", "..#..", ".###.", "....."}}},
    {U'j', {{"...#.", ".....", "...#.", "...#.", "#..#.", ".##..", "....."}}},
    {U'k', {{"#....", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "....."}}},
    {U'l', {{".##..", "..#..", "..#..", "..#..", "..#..", ".###.", "....."}}},
    {U'm', {{".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#", "....."}}},
    {U'n', {{".....", "####.", "#...#", "#...#", "#...#", "#...#", "....."}}},
    {U'o', {{".....", ".###.", "#...#", "#...#", "#...#", ".###.", "....."}}},
    {U'p', {{".....", "####.", "#...#", "####.", "#....", "#....", "....."}}},
    {U'q', {{".....", ".####", "#...#", ".####", "....#", "....#", "....."}}},
    {U'r', {{".....", "#.##.", "##...", "#....", "#....", "#....", "....."}}},
    {U's', {{".....", ".####", "#....", ".###.", "....#", "####.", "....."}}},
    {U't', {{".#...", "###..", ".#...", ".#...", ".#..#", "..##.", "....."}}},
    {U'u', {{".....", "#...#", "#...#", "#...#", "#...#", ".####", "....."}}},
    {U'v', {{".....", "#...#", "#...#", ".#.#.", ".#.#.", "..#..", "....."}}},
    {U'w', {{".....", "#.#.#", "#.#.#", "#.#.#", "#.#.#", ".#.#.", "....."}}},
    {U'x', {{".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "....."}}},
    {U'y', {{".....", "#...#", ".#..#", "..###", "....#", ".###.", "....."}}},
    {U'z', {{".....", "#####", "...#.", "..#..", ".#...", "#####", "....."}}},
    {U'0', {{".###.", "#..##", "#.#.#", "##..#", "#...#", ".###.", "....."}}},
    {U'1', {{"..#..", ".##..", "..#..", "..#..", "..#..", ".###.", "....."}}},
    {U'2', {{".###.", "#...#", "...#.", "..#..", ".#...", "#####", "....."}}},
    {U'3', {{"####.", "....#", ".###.", "....#", "....#", "####.", "....."}}},
    {U'4', {{"#..#.", "#..#.", "#####", "...#.", "...#.", "...#.", "....."}}},
    {U'5', {{"#####", "#....", "####.", "....#", "#...#", ".###.", "....."}}},
    {U'6', {{".###.", "#....", "####.", "#...#", "#...#", ".###.", "....."}}},
    {U'7', {{"#####", "....#", "...#.", "..#..", "..#..", "..#..", "....."}}},
    {U'8', {{".###.", "#...#", ".###.", "#...#", "#...#", ".###.", "....."}}},
    {U'9', {{".###.", "#...#", ".####", "....#", "....#", ".###.", "....."}}},
    {U'.', {{".....", ".....", ".....", ".....", ".##..", ".##..", "....."}}},
    {U',', {{".....", ".....", ".....", ".....", "..##.", "..#..", ".#..."}}},
    {U'-', {{".....", ".....", ".....", ".####", ".....", ".....", "....."}}},
    {U'\'', {{"..#..", "..#..", ".....", ".....", ".....", ".....", "....."}}},
};

}  // namespace

const GlyphBitmap* find_glyph(char32_t c) {
    for (const auto& g : kGlyphs)
        if (g.ch == c) return &g.bitmap;
    return nullptr;
}

std::string drawable_characters() {
    std::string out;
    for (const auto& g : kGlyphs) out.push_back(static_cast<char>(g.ch));
    return out;
}

}  // namespace htr
