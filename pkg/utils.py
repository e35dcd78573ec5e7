# utils.py
import pandas as pd

HEADER_FORMAT = {
    "bold": True,
    "text_wrap": True,
    "valign": "top",
    "border": 1,
}


def write_table_csv(df, path, float_format="%.4f"):
    df.to_csv(path, index=False, float_format=float_format)
    return path


def write_table_xlsx(df, path, sheet="Report"):
    """Writes a report table to Excel with a formatted header row."""
    with pd.ExcelWriter(path, engine="xlsxwriter") as writer:
        df.to_excel(writer, sheet_name=sheet, index=False)

        workbook = writer.book
        worksheet = writer.sheets[sheet]
        header_format = workbook.add_format(HEADER_FORMAT)

        for col_num, value in enumerate(df.columns.values):
            worksheet.write(0, col_num, value, header_format)

        # Width from the longest header or value in each column
        for col_num, column in enumerate(df.columns):
            longest = max([len(str(column))] + [len(str(v)) for v in df[column].tolist()])
            worksheet.set_column(col_num, col_num, min(max(longest + 2, 8), 40))
    return path

