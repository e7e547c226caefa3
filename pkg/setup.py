import os
import subprocess
import sys
import shutil


# === PATHS ===
VENV_DIR = "venv"
CONFIG_TEMPLATE = os.path.join("config", "config.ini.template")
CONFIG_FILE = os.path.join("config", "config.ini")
DEMO_MODEL = os.path.join("models", "demo.json")
DEMO_CHECKPOINT = os.path.join("models", "demo.skpt")


# === PYTHON DISCOVERY ===
def find_supported_python():
    candidates = []
    if sys.platform == "win32":
        python_exe = shutil.which("python")
        if python_exe:
            candidates.append(python_exe)
    else:
        for suffix in ["3.12", "3.11", "3.10", "3"]:
            exe = shutil.which(f"python{suffix}")
            if exe:
                candidates.append(exe)

    for candidate in candidates:
        try:
            version_output = subprocess.check_output(
                [candidate, "--version"],
                stderr=subprocess.STDOUT,
                text=True
            ).strip()
            if any(version_output.startswith(f"Python 3.{v}") for v in [10, 11, 12]):
                return candidate, version_output
        except Exception:
            continue
    return None, None


def check_python_binary():
    python_path, version = find_supported_python()
    if not python_path:
        print("Error: Python 3.10, 3.11, or 3.12 required.")
        sys.exit(1)
    print(f"Using {version} at {python_path}")
    return python_path


def get_python_cmd():
    return os.path.join(VENV_DIR, "Scripts", "python.exe") if sys.platform == "win32" else os.path.join(VENV_DIR, "bin", "python3")


def create_virtual_env(force_recreate=False):
    python_path = check_python_binary()
    if force_recreate and os.path.exists(VENV_DIR):
        print(f"Removing existing venv in {VENV_DIR}...")
        shutil.rmtree(VENV_DIR, ignore_errors=True)
    if not os.path.exists(VENV_DIR):
        print(f"Creating virtual environment in {VENV_DIR}...")
        subprocess.run([python_path, "-m", "venv", VENV_DIR], check=True)
    else:
        print(f"Virtual environment exists in {VENV_DIR}.")


# === INSTALL REQUIREMENTS ===
def install_requirements():
    python_cmd = get_python_cmd()
    if not os.path.exists("requirements.txt"):
        print("Error: requirements.txt not found.")
        sys.exit(1)

    print("Installing dependencies...")
    subprocess.run([python_cmd, "-m", "pip", "install", "--upgrade", "pip", "--quiet"], check=True)
    result = subprocess.run([python_cmd, "-m", "pip", "install", "-r", "requirements.txt", "--quiet"],
                            capture_output=True, text=True)
    if result.returncode != 0:
        print("Failed to install requirements")
        print(result.stderr.strip())
        sys.exit(1)
    print("complete")


def write_default_config():
    if os.path.exists(CONFIG_FILE):
        print(f"{CONFIG_FILE} already exists.")
        return
    shutil.copyfile(CONFIG_TEMPLATE, CONFIG_FILE)
    print(f"Wrote {CONFIG_FILE} from template")


# === DEMO CHECKPOINT ===
def synth_demo_checkpoint():
    """Small 8-layer model used by the quick-start commands in README.md."""
    if os.path.exists(DEMO_CHECKPOINT):
        print(f"{DEMO_CHECKPOINT} already exists.")
        return
    os.makedirs(os.path.dirname(DEMO_MODEL), exist_ok=True)
    with open(DEMO_MODEL, "w") as f:
        f.write('{"n_layers": 8, "d_model": 128, "n_heads": 4, "n_kv_heads": 2, "d_ff": 352, '
                '"vocab_size": 512, "max_seq_len": 128}\n')
    subprocess.run([get_python_cmd(), "-m", "src.main", "synth", "--model-config", DEMO_MODEL,
                    "--seed", "0", "--out", DEMO_CHECKPOINT], check=True)


# === RUN TESTS ===
def run_tests():
    print("Running tests...")
    result = subprocess.run([get_python_cmd(), "-m", "pytest", "test", "-m", "not slow"])
    sys.exit(result.returncode)


# === MAIN ===
def main():
    create_virtual_env()
    install_requirements()
    write_default_config()
    synth_demo_checkpoint()


# === ENTRY POINT ===
if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == "test":
        create_virtual_env()
        install_requirements()
        run_tests()
    else:
        main()
