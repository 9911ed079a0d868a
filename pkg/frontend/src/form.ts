// Form model built from a server-declared interface. The console never
// hardcodes per-service fields: everything renders from this model, and
// validation mirrors the server's structural rules so the submit button is
// enabled exactly when the server would accept the request.

import { InterfaceDescription, InterfaceElement, isKnownKind } from "./protocol.js";

export type FormValue = File | number | boolean | string | null;

export interface FieldState {
  element: InterfaceElement;
  supported: boolean;
  value: FormValue;
}

export interface FormModel {
  serviceName: string;
  fields: FieldState[];
}

export interface Problem {
  element: string;
  reason: string;
}

export function buildFormModel(desc: InterfaceDescription): FormModel {
  return {
    serviceName: desc.name,
    fields: desc.elements.map((element) => ({
      element,
      supported: isKnownKind(element.kind),
      value: defaultValue(element),
    })),
  };
}

function defaultValue(element: InterfaceElement): FormValue {
  switch (element.kind) {
    case "scalar_slider":
      return Number(element.constraints.default ?? element.constraints.minimum ?? 0);
    case "checkbox":
      return Boolean(element.constraints.default ?? false);
    case "choice":
      return String(element.constraints.default ?? element.constraints.options?.[0] ?? "");
    case "text":
      return String(element.constraints.default ?? "");
    default:
      return null; // volume needs a user-picked file; unknown kinds stay empty
  }
}

export function validateForm(model: FormModel): Problem[] {
  const problems: Problem[] = [];
  for (const field of model.fields) {
    const { element, value } = field;
    if (!field.supported) {
      problems.push({ element: element.name, reason: `unsupported kind "${element.kind}"` });
      continue;
    }
    if (value === null || value === "" && element.kind === "choice") {
      if (element.required) {
        problems.push({ element: element.name, reason: "required" });
      }
      continue;
    }
    switch (element.kind) {
      case "volume":
        if (!(value instanceof File)) {
          problems.push({ element: element.name, reason: "expected a volume file" });
        }
        break;
      case "scalar_slider": {
        const num = Number(value);
        const { minimum, maximum } = element.constraints;
        if (isNaN(num)) {
          problems.push({ element: element.name, reason: "expected a number" });
        } else if (num < minimum || num > maximum) {
          problems.push({
            element: element.name,
            reason: `value ${num} outside [${minimum}, ${maximum}]`,
          });
        }
        break;
      }
      case "checkbox":
        if (typeof value !== "boolean") {
          problems.push({ element: element.name, reason: "expected a boolean" });
        }
        break;
      case "choice":
        if (!element.constraints.options?.includes(value)) {
          problems.push({ element: element.name, reason: `"${value}" not among options` });
        }
        break;
      case "text":
        if (typeof value !== "string") {
          problems.push({ element: element.name, reason: "expected text" });
        }
        break;
    }
  }
  return problems;
}

export function canSubmit(model: FormModel): boolean {
  return validateForm(model).length === 0;
}

// Multipart body for POST /predict: part name = element name, volumes as
// binary files, everything else as text.
export function toFormData(model: FormModel): FormData {
  const data = new FormData();
  for (const field of model.fields) {
    const { element, value } = field;
    if (value === null) continue;
    if (value instanceof File) {
      data.append(element.name, value, value.name);
    } else if (typeof value === "boolean") {
      data.append(element.name, value ? "true" : "false");
    } else {
      data.append(element.name, String(value));
    }
  }
  return data;
}
