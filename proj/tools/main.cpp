#include <cstdio>

int main(int, char**) {
  std::fprintf(stderr, "armp: CLI not wired up yet\n");
  return 2;
}
