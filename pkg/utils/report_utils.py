import json
import os

import numpy as np


def _to_jsonable(value):
    """Convert numpy scalars/arrays and tuples so ``json.dump`` accepts them."""
    if isinstance(value, dict):
        return {str(key): _to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def save_json(data, path):
    """Write ``data`` as indented JSON with sorted keys.

    Non-finite floats become null so the file stays strict JSON.

    Args:
        data (dict): Report or summary document.
        path (str): Output file; parent directories are created.

    Returns:
        str: The path written.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_to_jsonable(data), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def execute_with_validation(produce, validate, max_retries=3, label="run"):
    """Produce a result, validate it, and retry with the validator's feedback.

    Args:
        produce (callable): ``produce(attempt, feedback)`` returns a result;
            ``feedback`` is None on the first attempt.
        validate (callable): ``validate(result)`` returns a dict with a
            ``passed`` flag plus anything ``produce`` should see next time;
            ``retry: False`` ends the loop early.
        max_retries (int): Maximum number of attempts before giving up.
        label (str): Name used in progress lines.

    Returns:
        tuple:
            - result: Output of the last attempt that produced one.
            - feedback (dict): Validator output for that attempt.
            - passed (bool): Whether validation succeeded.
            - attempt_count (int): Number of attempts executed.
    """
    print(f"\n🚀 Starting {label} with up to {max_retries} attempts...")

    result, feedback = None, None
    for attempt in range(1, max_retries + 1):
        print(f"\n🔄 Attempt {attempt}/{max_retries}")

        try:
            result = produce(attempt, feedback)
            feedback = validate(result)

            if feedback.get("passed", False):
                print(f"✅ Validation PASSED - {label} is consistent!")
                return result, feedback, True, attempt

            print(f"❌ Validation FAILED on attempt {attempt}")
            print(f"📋 Validator feedback: {feedback}")
            if not feedback.get("retry", True):
                print("⚠️ Validator has no change to suggest. Stopping.")
                return result, feedback, False, attempt
            if attempt < max_retries:
                print("🔄 Retrying with validator feedback...")
            else:
                print("⚠️ Maximum retries reached. Final results may contain violations.")

        except Exception as e:
            print(f"❌ Error during attempt {attempt}: {str(e)}")
            if attempt == max_retries:
                raise
            print("🔄 Retrying due to execution error...")

    return result, feedback, False, max_retries


def print_execution_summary(title, summary, passed, attempt_count=1):
    """Print a formatted summary of one command.

    Args:
        title (str): Section heading.
        summary (dict): Key figures to list.
        passed (bool): Whether the command's checks passed.
        attempt_count (int): Number of attempts made.
    """
    print("\n" + "=" * 60)
    print(f"📊 {title.upper()} SUMMARY")
    print("=" * 60)
    print(f"🔢 Total attempts: {attempt_count}")
    print(f"✅ Validation status: {'PASSED' if passed else 'FAILED'}")

    print("\n" + "=" * 60)
    print("📋 RESULT")
    print("=" * 60)
    for key, value in summary.items():
        if isinstance(value, dict):
            print(f"{key}:")
            for inner_key, inner_value in value.items():
                print(f"    {inner_key}: {inner_value}")
        else:
            print(f"{key}: {value}")
    print("=" * 60)
