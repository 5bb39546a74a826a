// Writes the AES-256 and SHA-256 compression circuits in Bristol Fashion.

#include <filesystem>
#include <iostream>

#include "shapmkt/bristol.h"
#include "shapmkt/circuits.h"
#include "shapmkt/error.h"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: gen_circuits <output-dir>\n";
    return 2;
  }
  try {
    const std::filesystem::path dir(argv[1]);
    std::filesystem::create_directories(dir);
    shapmkt::SaveBristol(shapmkt::Aes256Circuit(), (dir / "aes_256.txt").string());
    shapmkt::SaveBristol(shapmkt::Sha256CompressCircuit(), (dir / "sha256.txt").string());
  } catch (const std::exception& e) {
    std::cerr << "gen_circuits: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
