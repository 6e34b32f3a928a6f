from pathlib import Path

import yaml


def define_env(env: object) -> None:
    """Register the macros used by the documentation pages."""

    @env.macro
    def render_config_options():
        with open(Path(env.project_dir) / "protojoint" / "config_declaration.yml") as f:
            data = yaml.safe_load(f)

        markdown = ""

        for group in data.get("groups", []):
            section_name = group.get("annotation", "General Settings")
            section_desc = group.get("description", "").strip()

            markdown += f"## {section_name}\n\n"

            if section_desc:
                markdown += f"{section_desc}\n\n"

            markdown += "---\n\n"

            for opt in group.get("options", []):
                markdown += _generate_option_markdown(opt)

        return markdown

    def _generate_option_markdown(opt: dict) -> str:
        key = opt.get("key", "")
        desc = str(opt.get("description", "")).strip()
        allowed_values = opt.get("allowed_values", [])

        markdown = f"### `{key}`\n\n"

        if desc:
            markdown += f"{desc}\n\n"

        markdown += "| | |\n|---|---|\n"
        markdown += f"| **Type** | `{opt.get('type', 'str')}` |\n"
        markdown += f"| **Default** | `{opt.get('default', 'None')}` |\n"

        if "minimum" in opt:
            markdown += f"| **Minimum** | `{opt['minimum']}` |\n"

        if allowed_values:
            values_str = ", ".join(f"`{v}`" for v in allowed_values)
            markdown += f"| **Allowed values** | {values_str} |\n"

        markdown += "\n"

        if example := opt.get("example"):
            markdown += f"```ini\n{key} = {example}\n```\n\n"

        return markdown + "---\n\n"
