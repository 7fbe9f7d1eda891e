#include <cstdio>

int main() {
  std::puts("cranbf: subcommands not wired up yet");
  return 1;
}
