"""Small fixtures shared by several test modules."""


def write_placeholder_manifest(path, counts):
    """Manifest with the given (label, split) -> count cells and placeholder paths."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("path,label,split\n")
        for (label, split), n in counts.items():
            for i in range(n):
                f.write(f"{split}/{label}/{label}_{i:05d}.jpg,{label},{split}\n")
    return path
